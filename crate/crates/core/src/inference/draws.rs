use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Post-burn-in acceptance rate per sampling coordinate and chain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceLedger {
    pub coordinates: Vec<String>,
    /// `rates[chain][coordinate]`
    pub rates: Vec<Vec<f64>>,
}

impl AcceptanceLedger {
    /// Mean acceptance over chains for a named coordinate.
    pub fn mean_rate(&self, name: &str) -> Option<f64> {
        let i = self.coordinates.iter().position(|c| c == name)?;
        let n = self.rates.len() as f64;
        Some(self.rates.iter().map(|r| r[i]).sum::<f64>() / n)
    }
}

/// Stored posterior draws, chain by chain, with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    columns: Vec<String>,
    chain: Vec<usize>,
    /// Row-major `n_draws x n_columns`.
    data: Vec<f64>,
    pub acceptance: AcceptanceLedger,
}

impl PosteriorDraws {
    /// Builds draws from `chains[c][m][p]`.
    pub fn from_chains(columns: Vec<String>, chains: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let p = columns.len();
        let mut chain = Vec::new();
        let mut data = Vec::new();
        for (c, rows) in chains.into_iter().enumerate() {
            for row in rows {
                if row.len() != p {
                    return Err(Error::Validation(format!("draw row has {} values, expected {p}", row.len())));
                }
                chain.push(c);
                data.extend(row);
            }
        }
        Ok(PosteriorDraws { columns, chain, data, acceptance: AcceptanceLedger::default() })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn n_draws(&self) -> usize {
        self.chain.len()
    }

    pub fn n_chains(&self) -> usize {
        self.chain.iter().max().map_or(0, |&c| c + 1)
    }

    pub fn chain_ids(&self) -> &[usize] {
        &self.chain
    }

    pub fn row(&self, m: usize) -> &[f64] {
        let p = self.columns.len();
        &self.data[m * p..(m + 1) * p]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.column_index(name).is_some()
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.column_index(name)
            .ok_or_else(|| Error::Validation(format!("draws have no column `{name}`")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.require(name)?;
        Ok(self.column_at(j))
    }

    pub fn column_at(&self, j: usize) -> Vec<f64> {
        let p = self.columns.len();
        (0..self.n_draws()).map(|m| self.data[m * p + j]).collect()
    }

    /// Column values split by chain.
    pub fn column_by_chain(&self, name: &str) -> Result<Vec<Vec<f64>>> {
        let j = self.require(name)?;
        let p = self.columns.len();
        let mut out = vec![Vec::new(); self.n_chains()];
        for (m, &c) in self.chain.iter().enumerate() {
            out[c].push(self.data[m * p + j]);
        }
        Ok(out)
    }

    /// Appends a derived column.
    pub fn add_column(&mut self, name: &str, values: &[f64]) -> Result<()> {
        if values.len() != self.n_draws() {
            return Err(Error::Validation(format!(
                "derived column `{name}` has {} values for {} draws",
                values.len(),
                self.n_draws()
            )));
        }
        if self.has_column(name) {
            return Err(Error::Validation(format!("column `{name}` already exists")));
        }
        let p = self.columns.len();
        let mut data = Vec::with_capacity(self.data.len() + values.len());
        for (m, v) in values.iter().enumerate() {
            data.extend_from_slice(&self.data[m * p..(m + 1) * p]);
            data.push(*v);
        }
        self.data = data;
        self.columns.push(name.to_string());
        Ok(())
    }

    /// Writes a CSV with a leading `chain` column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["chain".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        let mut buf: Vec<String> = Vec::with_capacity(self.columns.len() + 1);
        for m in 0..self.n_draws() {
            buf.clear();
            buf.push(self.chain[m].to_string());
            buf.extend(self.row(m).iter().map(|v| format!("{v:?}")));
            w.write_record(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut v = Vec::new();
        self.write_csv(&mut v)?;
        String::from_utf8(v).map_err(|e| Error::Validation(e.to_string()))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.get(0) != Some("chain") {
            return Err(Error::Schema("draws file must start with a `chain` column".into()));
        }
        let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut chain = Vec::new();
        let mut data = Vec::new();
        for (n, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = n + 2;
            let bad = |msg: String| Error::Parse { line, message: msg };
            chain.push(rec[0].parse::<usize>().map_err(|_| bad(format!("invalid chain id `{}`", &rec[0])))?);
            for field in rec.iter().skip(1) {
                data.push(field.parse::<f64>().map_err(|_| bad(format!("invalid number `{field}`")))?);
            }
        }
        if chain.is_empty() {
            return Err(Error::Validation("draws file has no rows".into()));
        }
        Ok(PosteriorDraws { columns, chain, data, acceptance: AcceptanceLedger::default() })
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PosteriorDraws {
        PosteriorDraws::from_chains(
            vec!["a".into(), "beta1[1,D|2,D]".into()],
            vec![vec![vec![0.1, 1.0], vec![0.2, 2.0]], vec![vec![0.30000000000000004, -3.5e-12]]],
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let d = sample();
        let text = d.to_csv_string().unwrap();
        assert!(text.starts_with("chain,a,\"beta1[1,D|2,D]\""));
        let back = PosteriorDraws::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.column_by_chain("a").unwrap(), vec![vec![0.1, 0.2], vec![0.30000000000000004]]);
    }

    #[test]
    fn derived_columns_append() {
        let mut d = sample();
        d.add_column("sum", &[1.1, 2.2, 0.3]).unwrap();
        assert_eq!(d.row(1), &[0.2, 2.0, 2.2]);
        assert!(d.add_column("short", &[1.0]).is_err());
        assert!(d.column("missing").is_err());
    }
}
