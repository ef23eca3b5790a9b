use clap::Parser;

fn main() {
    let cli = gearcalib_cli::Cli::parse();
    std::process::exit(gearcalib_cli::run(cli));
}
