//! Calibration-experiment data: per-trip records, the long-format species
//! MaxN table, and the GAJ:GAJ+ ratios derived from it.
//!
//! Trips are indexed by boat `i`, reef size `j` and replicate `k` within the
//! `(i, j)` cell. Replicates are numbered in file order.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Additive shift applied to every GAJ:GAJ+ ratio so that `log r` is finite.
pub const RATIO_SHIFT: f64 = 1e-6;

/// Camera (gear) types, in the canonical D, S, T, R order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Camera {
    #[serde(rename = "D")]
    Drop,
    #[serde(rename = "S")]
    Sbruv,
    #[serde(rename = "T")]
    Trap,
    #[serde(rename = "R")]
    Rov,
}

impl Camera {
    pub const ALL: [Camera; 4] = [Camera::Drop, Camera::Sbruv, Camera::Trap, Camera::Rov];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Camera {
        Camera::ALL[i]
    }

    pub fn code(self) -> char {
        match self {
            Camera::Drop => 'D',
            Camera::Sbruv => 'S',
            Camera::Trap => 'T',
            Camera::Rov => 'R',
        }
    }
}

impl fmt::Display for Camera {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

impl FromStr for Camera {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "D" | "d" | "drop" => Ok(Camera::Drop),
            "S" | "s" | "sbruv" | "SBRUV" => Ok(Camera::Sbruv),
            "T" | "t" | "trap" => Ok(Camera::Trap),
            "R" | "r" | "rov" | "ROV" => Ok(Camera::Rov),
            other => Err(Error::Validation(format!("unknown camera `{other}`"))),
        }
    }
}

/// One boat trip of the calibration experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub trip_id: String,
    /// Boat index `i` in {1, 2}.
    pub boat: usize,
    /// Reef size index `j`: 1 = large, 2 = small.
    pub reef_size: usize,
    /// Replicate `k` within the `(boat, reef_size)` cell, starting at 1.
    pub replicate: usize,
    /// MaxN per camera in D, S, T, R order; `None` when the camera was absent.
    pub maxn: [Option<u64>; 4],
    /// Acoustic GAJ+ count over all transects.
    pub acoustic_total: u64,
    /// Acoustic GAJ+ count over focal transects only.
    pub acoustic_focal: u64,
    /// Lincoln-Petersen abundance estimate, when available.
    pub markrecapture: Option<u64>,
    /// Pooled GAJ:GAJ+ ratio (shifted).
    pub pooled_ratio: f64,
    pub reef_type: String,
}

impl TripRecord {
    pub fn maxn_of(&self, camera: Camera) -> Option<u64> {
        self.maxn[camera.index()]
    }

    pub fn present_cameras(&self) -> Vec<Camera> {
        Camera::ALL
            .into_iter()
            .filter(|c| self.maxn[c.index()].is_some())
            .collect()
    }

    /// Ratio-adjusted acoustic count `r * N`.
    pub fn adjusted_acoustic(&self) -> f64 {
        self.pooled_ratio * self.acoustic_total as f64
    }
}

/// Number of replicates per `(boat, reef_size)` cell, indexed `[i-1][j-1]`.
pub fn cell_sizes(trips: &[TripRecord]) -> [[usize; 2]; 2] {
    let mut k = [[0usize; 2]; 2];
    for t in trips {
        k[t.boat - 1][t.reef_size - 1] += 1;
    }
    k
}

/// Checks the dataset-level invariants of a trip list.
pub fn validate_trips(trips: &[TripRecord]) -> Result<()> {
    if trips.is_empty() {
        return Err(Error::NoTrips);
    }
    let mut ids = HashSet::new();
    let mut cells: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
    for t in trips {
        if !ids.insert(t.trip_id.as_str()) {
            return Err(Error::Validation(format!("duplicate trip_id `{}`", t.trip_id)));
        }
        if !(1..=2).contains(&t.boat) || !(1..=2).contains(&t.reef_size) {
            return Err(Error::Validation(format!(
                "trip `{}`: boat and reef_size must be 1 or 2",
                t.trip_id
            )));
        }
        if t.replicate == 0 {
            return Err(Error::Validation(format!("trip `{}`: replicate must be >= 1", t.trip_id)));
        }
        if !cells.entry((t.boat, t.reef_size)).or_default().insert(t.replicate) {
            return Err(Error::Validation(format!(
                "duplicate (i,j,k) = ({},{},{}) at trip `{}`",
                t.boat, t.reef_size, t.replicate, t.trip_id
            )));
        }
        if t.acoustic_focal > t.acoustic_total {
            return Err(Error::Validation(format!(
                "trip `{}`: N_focal ({}) exceeds N ({})",
                t.trip_id, t.acoustic_focal, t.acoustic_total
            )));
        }
        if !(t.pooled_ratio.is_finite() && t.pooled_ratio > 0.0 && t.pooled_ratio <= 1.0 + RATIO_SHIFT)
        {
            return Err(Error::Validation(format!(
                "trip `{}`: pooled ratio {} outside (0, 1+1e-6]",
                t.trip_id, t.pooled_ratio
            )));
        }
    }
    for ((i, j), ks) in &cells {
        let n = ks.len();
        if ks.iter().copied().ne(1..=n) {
            return Err(Error::Validation(format!(
                "cell ({i},{j}): replicates are not 1..{n} without gaps"
            )));
        }
    }
    Ok(())
}

fn parse_missing_u64(field: &str, line: usize, column: &str) -> Result<Option<u64>> {
    let f = field.trim();
    if f.is_empty() || f == "NA" {
        return Ok(None);
    }
    f.parse::<u64>().map(Some).map_err(|_| Error::Parse {
        line,
        message: format!("column `{column}`: expected a nonnegative integer or NA, got `{f}`"),
    })
}

fn parse_required_u64(field: &str, line: usize, column: &str) -> Result<u64> {
    parse_missing_u64(field, line, column)?.ok_or_else(|| Error::Parse {
        line,
        message: format!("column `{column}` may not be missing"),
    })
}

fn parse_index(field: &str, line: usize, column: &str) -> Result<usize> {
    match field.trim() {
        "1" => Ok(1),
        "2" => Ok(2),
        "L" | "large" if column == "reef_size" => Ok(1),
        "S" | "small" if column == "reef_size" => Ok(2),
        other => Err(Error::Parse {
            line,
            message: format!("column `{column}`: expected 1 or 2, got `{other}`"),
        }),
    }
}

const TRIP_COLUMNS: [&str; 12] = [
    "trip_id", "boat", "reef_size", "reef_type", "maxn_D", "maxn_S", "maxn_T", "maxn_R", "N",
    "N_focal", "N_mr", "r",
];

/// Reads `trips.csv`. The `r` column may be blank when `species` is supplied,
/// in which case the pooled ratio is computed over the trip's present cameras.
pub fn load_trips(path: impl AsRef<Path>, species: Option<&SpeciesMaxNTable>) -> Result<Vec<TripRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_trips(&text, species)
}

pub fn parse_trips(text: &str, species: Option<&SpeciesMaxNTable>) -> Result<Vec<TripRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?.clone();
    let mut col = BTreeMap::new();
    for name in TRIP_COLUMNS {
        let idx = headers.iter().position(|h| h == name);
        match (name, idx) {
            (_, Some(i)) => {
                col.insert(name, i);
            }
            ("r", None) => {}
            (_, None) => {
                return Err(Error::Parse { line: 1, message: format!("missing column `{name}`") })
            }
        }
    }

    let mut trips = Vec::new();
    let mut next_k = [[0usize; 2]; 2];
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != headers.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let get = |name: &str| col.get(name).map(|&i| &record[i]).unwrap_or("");
        let trip_id = get("trip_id").to_string();
        if trip_id.is_empty() {
            return Err(Error::Parse { line, message: "empty trip_id".into() });
        }
        let boat = parse_index(get("boat"), line, "boat")?;
        let reef_size = parse_index(get("reef_size"), line, "reef_size")?;
        let mut maxn = [None; 4];
        for cam in Camera::ALL {
            let name = format!("maxn_{cam}");
            maxn[cam.index()] = parse_missing_u64(get(&name), line, &name)?;
        }
        let acoustic_total = parse_required_u64(get("N"), line, "N")?;
        let acoustic_focal = parse_required_u64(get("N_focal"), line, "N_focal")?;
        let markrecapture = parse_missing_u64(get("N_mr"), line, "N_mr")?;
        let r_field = get("r").trim();
        let pooled_ratio = if r_field.is_empty() || r_field == "NA" {
            let table = species.ok_or_else(|| Error::Parse {
                line,
                message: "pooled ratio `r` missing and no species table supplied".into(),
            })?;
            let present: Vec<Camera> =
                Camera::ALL.into_iter().filter(|c| maxn[c.index()].is_some()).collect();
            compute_pooled_ratio(table, &trip_id, &present)?
        } else {
            r_field.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("column `r`: invalid number `{r_field}`"),
            })?
        };
        next_k[boat - 1][reef_size - 1] += 1;
        trips.push(TripRecord {
            trip_id,
            boat,
            reef_size,
            replicate: next_k[boat - 1][reef_size - 1],
            maxn,
            acoustic_total,
            acoustic_focal,
            markrecapture,
            pooled_ratio,
            reef_type: get("reef_type").to_string(),
        });
    }
    validate_trips(&trips)?;
    Ok(trips)
}

fn fmt_opt(v: Option<u64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
}

/// Serializes trips in the `trips.csv` schema. Ratios are written with the
/// shortest representation that round-trips exactly.
pub fn trips_to_csv(trips: &[TripRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRIP_COLUMNS)?;
    for t in trips {
        w.write_record([
            t.trip_id.clone(),
            t.boat.to_string(),
            t.reef_size.to_string(),
            t.reef_type.clone(),
            fmt_opt(t.maxn[0]),
            fmt_opt(t.maxn[1]),
            fmt_opt(t.maxn[2]),
            fmt_opt(t.maxn[3]),
            t.acoustic_total.to_string(),
            t.acoustic_focal.to_string(),
            fmt_opt(t.markrecapture),
            format!("{:?}", t.pooled_ratio),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_trips(path: impl AsRef<Path>, trips: &[TripRecord]) -> Result<()> {
    std::fs::write(path, trips_to_csv(trips)?)?;
    Ok(())
}

/// Registry flags for one species.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeciesFlags {
    pub is_gaj: bool,
    pub is_gaj_plus: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesRow {
    pub trip_id: String,
    pub camera: Camera,
    pub species_id: String,
    pub maxn: u64,
}

/// Long-format per-species MaxN table with its species registry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpeciesMaxNTable {
    rows: Vec<SpeciesRow>,
    registry: BTreeMap<String, SpeciesFlags>,
}

impl SpeciesMaxNTable {
    pub fn new(rows: Vec<SpeciesRow>, registry: BTreeMap<String, SpeciesFlags>) -> Result<Self> {
        for (id, flags) in &registry {
            if flags.is_gaj && !flags.is_gaj_plus {
                return Err(Error::Validation(format!(
                    "species `{id}` is flagged GAJ but not GAJ+"
                )));
            }
        }
        let mut seen = HashSet::new();
        for row in &rows {
            if !registry.contains_key(&row.species_id) {
                return Err(Error::Validation(format!(
                    "species `{}` not in registry",
                    row.species_id
                )));
            }
            if !seen.insert((row.trip_id.as_str(), row.camera, row.species_id.as_str())) {
                return Err(Error::Validation(format!(
                    "duplicate (trip_id, camera, species_id) = ({}, {}, {})",
                    row.trip_id, row.camera, row.species_id
                )));
            }
        }
        Ok(SpeciesMaxNTable { rows, registry })
    }

    pub fn rows(&self) -> &[SpeciesRow] {
        &self.rows
    }

    pub fn registry(&self) -> &BTreeMap<String, SpeciesFlags> {
        &self.registry
    }

    /// (GAJ sum, GAJ+ sum, any rows) for one trip and camera.
    fn sums(&self, trip_id: &str, camera: Camera) -> (u64, u64, bool) {
        let mut gaj = 0;
        let mut plus = 0;
        let mut any = false;
        for row in self.rows.iter().filter(|r| r.trip_id == trip_id && r.camera == camera) {
            any = true;
            let flags = self.registry[&row.species_id];
            if flags.is_gaj {
                gaj += row.maxn;
            }
            if flags.is_gaj_plus {
                plus += row.maxn;
            }
        }
        (gaj, plus, any)
    }

    pub fn load(species_path: impl AsRef<Path>, registry_path: impl AsRef<Path>) -> Result<Self> {
        let registry = parse_registry(&std::fs::read_to_string(registry_path)?)?;
        let rows = parse_species_rows(&std::fs::read_to_string(species_path)?)?;
        SpeciesMaxNTable::new(rows, registry)
    }

    pub fn species_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["trip_id", "camera", "species_id", "maxn"])?;
        for r in &self.rows {
            w.write_record([r.trip_id.clone(), r.camera.to_string(), r.species_id.clone(), r.maxn.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("utf-8"))
    }

    pub fn registry_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["species_id", "is_gaj", "is_gaj_plus"])?;
        for (id, f) in &self.registry {
            w.write_record([id.clone(), (f.is_gaj as u8).to_string(), (f.is_gaj_plus as u8).to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("utf-8"))
    }
}

fn parse_flag(field: &str, line: usize) -> Result<bool> {
    match field.trim() {
        "1" | "true" | "TRUE" | "T" => Ok(true),
        "0" | "false" | "FALSE" | "F" => Ok(false),
        other => Err(Error::Parse { line, message: format!("invalid flag `{other}`") }),
    }
}

pub fn parse_registry(text: &str) -> Result<BTreeMap<String, SpeciesFlags>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != 3 {
            return Err(Error::Parse { line, message: "expected species_id,is_gaj,is_gaj_plus".into() });
        }
        let flags = SpeciesFlags {
            is_gaj: parse_flag(&record[1], line)?,
            is_gaj_plus: parse_flag(&record[2], line)?,
        };
        if out.insert(record[0].to_string(), flags).is_some() {
            return Err(Error::Validation(format!("duplicate registry species `{}`", &record[0])));
        }
    }
    Ok(out)
}

pub fn parse_species_rows(text: &str) -> Result<Vec<SpeciesRow>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != 4 {
            return Err(Error::Parse { line, message: "expected trip_id,camera,species_id,maxn".into() });
        }
        rows.push(SpeciesRow {
            trip_id: record[0].to_string(),
            camera: record[1].parse().map_err(|e: Error| Error::Parse { line, message: e.to_string() })?,
            species_id: record[2].to_string(),
            maxn: parse_required_u64(&record[3], line, "maxn")?,
        });
    }
    Ok(rows)
}

/// Pooled GAJ:GAJ+ ratio over the given cameras, plus [`RATIO_SHIFT`].
pub fn compute_pooled_ratio(table: &SpeciesMaxNTable, trip_id: &str, present: &[Camera]) -> Result<f64> {
    let (mut num, mut den) = (0u64, 0u64);
    for &cam in present {
        let (g, p, _) = table.sums(trip_id, cam);
        num += g;
        den += p;
    }
    if den == 0 {
        return Err(Error::NoGajPlus { trip_id: trip_id.to_string(), camera: None });
    }
    Ok(num as f64 / den as f64 + RATIO_SHIFT)
}

/// Single-camera GAJ:GAJ+ ratio plus [`RATIO_SHIFT`]; `None` when the
/// camera has no rows for the trip.
pub fn compute_camera_ratio(table: &SpeciesMaxNTable, trip_id: &str, camera: Camera) -> Result<Option<f64>> {
    let (g, p, any) = table.sums(trip_id, camera);
    if !any {
        return Ok(None);
    }
    if p == 0 {
        return Err(Error::NoGajPlus { trip_id: trip_id.to_string(), camera: Some(camera.code()) });
    }
    Ok(Some(g as f64 / p as f64 + RATIO_SHIFT))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry() -> BTreeMap<String, SpeciesFlags> {
        let mut r = BTreeMap::new();
        r.insert("gaj".into(), SpeciesFlags { is_gaj: true, is_gaj_plus: true });
        r.insert("almaco".into(), SpeciesFlags { is_gaj: false, is_gaj_plus: true });
        r.insert("tomtate".into(), SpeciesFlags { is_gaj: false, is_gaj_plus: false });
        r
    }

    fn row(trip: &str, cam: Camera, sp: &str, n: u64) -> SpeciesRow {
        SpeciesRow { trip_id: trip.into(), camera: cam, species_id: sp.into(), maxn: n }
    }

    const HEADER: &str = "trip_id,boat,reef_size,reef_type,maxn_D,maxn_S,maxn_T,maxn_R,N,N_focal,N_mr,r\n";

    fn cell_file(sizes: [[usize; 2]; 2]) -> String {
        let mut s = HEADER.to_string();
        let mut n = 0;
        for i in 1..=2 {
            for j in 1..=2 {
                for _ in 0..sizes[i - 1][j - 1] {
                    n += 1;
                    s.push_str(&format!("t{n},{i},{j},pyramid,1,2,3,NA,40,20,NA,0.5\n"));
                }
            }
        }
        s
    }

    #[test]
    fn replicate_indices_follow_file_order() {
        let trips = parse_trips(&cell_file([[13, 2], [4, 2]]), None).unwrap();
        assert_eq!(trips.len(), 21);
        assert_eq!(cell_sizes(&trips), [[13, 2], [4, 2]]);
        let k11: Vec<usize> = trips.iter().filter(|t| t.boat == 1 && t.reef_size == 1).map(|t| t.replicate).collect();
        assert_eq!(k11, (1..=13).collect::<Vec<_>>());
    }

    #[test]
    fn empty_file_is_rejected() {
        let err = parse_trips(HEADER, None).unwrap_err();
        assert_eq!(err.to_string(), "no trips");
        assert!(matches!(parse_trips("", None), Err(Error::Parse { .. } | Error::NoTrips)));
    }

    #[test]
    fn na_and_blank_are_missing() {
        let text = format!("{HEADER}a,1,1,x,NA,,3,4,10,5,NA,0.3\n");
        let t = &parse_trips(&text, None).unwrap()[0];
        assert_eq!(t.maxn, [None, None, Some(3), Some(4)]);
        assert_eq!(t.markrecapture, None);
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = format!("{HEADER}a,1,1,x,1,2,3,4,10,5,NA,0.3\nb,1,1,x,1,two,3,4,10,5,NA,0.3\n");
        match parse_trips(&text, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn focal_exceeding_total_is_rejected() {
        let text = format!("{HEADER}a,1,1,x,1,2,3,4,10,11,NA,0.3\n");
        assert!(matches!(parse_trips(&text, None), Err(Error::Validation(_))));
    }

    #[test]
    fn duplicate_cell_index_is_rejected() {
        let mut trips = parse_trips(&cell_file([[2, 0], [0, 0]]), None).unwrap();
        trips[1].replicate = 1;
        let err = validate_trips(&trips).unwrap_err();
        assert!(err.to_string().contains("duplicate (i,j,k)"), "{err}");
    }

    #[test]
    fn ratio_computed_from_species_when_blank() {
        let table = SpeciesMaxNTable::new(
            vec![row("a", Camera::Trap, "gaj", 3), row("a", Camera::Trap, "almaco", 9)],
            registry(),
        )
        .unwrap();
        let text = format!("{HEADER}a,1,1,x,NA,NA,3,NA,10,5,NA,\n");
        let t = &parse_trips(&text, Some(&table)).unwrap()[0];
        assert_eq!(t.pooled_ratio, 3.0 / 12.0 + RATIO_SHIFT);
        assert!(parse_trips(&text, None).is_err());
    }

    #[test]
    fn pooled_ratio_examples() {
        let table = SpeciesMaxNTable::new(
            vec![
                row("zero", Camera::Drop, "almaco", 5),
                row("zero", Camera::Drop, "tomtate", 40),
                row("all", Camera::Sbruv, "gaj", 4),
                row("all", Camera::Trap, "gaj", 3),
                row("mix", Camera::Sbruv, "gaj", 1),
                row("mix", Camera::Sbruv, "almaco", 4),
                row("mix", Camera::Trap, "gaj", 2),
                row("mix", Camera::Trap, "almaco", 5),
                row("mix", Camera::Trap, "tomtate", 100),
                row("none", Camera::Trap, "tomtate", 2),
            ],
            registry(),
        )
        .unwrap();
        assert_eq!(compute_pooled_ratio(&table, "zero", &[Camera::Drop]).unwrap(), 1e-6);
        assert_eq!(compute_pooled_ratio(&table, "all", &[Camera::Sbruv, Camera::Trap]).unwrap(), 1.0 + 1e-6);
        // (1 + 2) / (5 + 7)
        let r = compute_pooled_ratio(&table, "mix", &[Camera::Sbruv, Camera::Trap]).unwrap();
        assert!((r - 0.250001).abs() < 1e-15);
        assert!(matches!(
            compute_pooled_ratio(&table, "none", &[Camera::Trap]),
            Err(Error::NoGajPlus { .. })
        ));
    }

    #[test]
    fn camera_ratio_examples() {
        let table = SpeciesMaxNTable::new(
            vec![
                row("a", Camera::Trap, "gaj", 2),
                row("a", Camera::Trap, "almaco", 2),
                row("a", Camera::Drop, "almaco", 9),
                row("a", Camera::Rov, "tomtate", 9),
            ],
            registry(),
        )
        .unwrap();
        assert_eq!(compute_camera_ratio(&table, "a", Camera::Sbruv).unwrap(), None);
        assert!((compute_camera_ratio(&table, "a", Camera::Trap).unwrap().unwrap() - 0.500001).abs() < 1e-15);
        assert_eq!(compute_camera_ratio(&table, "a", Camera::Drop).unwrap(), Some(1e-6));
        assert!(compute_camera_ratio(&table, "a", Camera::Rov).is_err());
    }

    #[test]
    fn registry_rejects_gaj_without_plus() {
        let mut reg = registry();
        reg.insert("bad".into(), SpeciesFlags { is_gaj: true, is_gaj_plus: false });
        assert!(SpeciesMaxNTable::new(vec![], reg).is_err());
    }

    #[test]
    fn duplicate_species_row_rejected() {
        let rows = vec![row("a", Camera::Trap, "gaj", 2), row("a", Camera::Trap, "gaj", 3)];
        assert!(SpeciesMaxNTable::new(rows, registry()).is_err());
    }
}
