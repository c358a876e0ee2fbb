//! Feature grids over the field sphere, parallel labelling sweeps, seeded
//! train/test splits and CSV persistence.

use std::collections::HashSet;
use std::f64::consts::{PI, TAU};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::fmt17;
use crate::error::{Error, Result};
use crate::singularity::{Label, QuenchAnalyzer, QuenchOutcome, Scenario};
use crate::spin_model::FieldVector;

/// Environment variable consulted for the default worker count.
pub const WORKERS_ENV: &str = "QUENCH_WORKERS";
/// Smallest dataset accepted by [`split`].
pub const MIN_SPLIT_ROWS: usize = 10;
pub const CSV_HEADER: [&str; 4] = ["theta", "phi", "h", "label"];

/// Worker count from `QUENCH_WORKERS`, else the machine's parallelism.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f` on a dedicated pool of `workers` threads (0 = default).
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let n = if workers == 0 { default_workers() } else { workers };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {n} workers: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub theta: f64,
    pub phi: f64,
    pub h: f64,
    pub label: Option<Label>,
}

impl FeatureRow {
    pub fn unlabeled(theta: f64, phi: f64, h: f64) -> Self {
        Self { theta, phi, h, label: None }
    }

    pub fn field(&self) -> Result<FieldVector> {
        FieldVector::new(self.h, self.theta, self.phi)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if !(0.0..=TAU).contains(&self.theta) {
            return Err(format!("theta {} outside [0, 2π]", self.theta));
        }
        if !(0.0..=PI).contains(&self.phi) {
            return Err(format!("phi {} outside [0, π]", self.phi));
        }
        if !(self.h >= 0.0 && self.h.is_finite()) {
            return Err(format!("h {} must be finite and >= 0", self.h));
        }
        Ok(())
    }

    fn key(&self) -> [u64; 3] {
        [self.theta.to_bits(), self.phi.to_bits(), self.h.to_bits()]
    }
}

/// Description of a rectangular grid, kept so a dataset can be regenerated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub h_values: Vec<f64>,
    pub n_theta: usize,
    pub n_phi: usize,
}

impl GridSpec {
    pub fn rows(&self) -> Result<Vec<FeatureRow>> {
        full_grid(&self.h_values, self.n_theta, self.n_phi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFailure {
    pub row: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub scenario: Scenario,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    pub seed: u64,
    /// Seconds since the Unix epoch (`SOURCE_DATE_EPOCH` when set).
    pub generated_unix: u64,
    #[serde(default)]
    pub failures: Vec<RowFailure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub rows: Vec<FeatureRow>,
    pub meta: DatasetMeta,
}

fn linspace(n: usize, end: f64) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| if i + 1 == n { end } else { end * i as f64 / (n - 1) as f64 })
}

/// `n_theta × n_phi` grid with inclusive endpoints, θ varying slowest.
pub fn angle_grid(n_theta: usize, n_phi: usize, h: f64) -> Result<Vec<FeatureRow>> {
    if n_theta < 2 || n_phi < 2 {
        return Err(Error::InvalidConfig(format!("grid needs >= 2 points per axis, got {n_theta}x{n_phi}")));
    }
    if !(h >= 0.0 && h.is_finite()) {
        return Err(Error::InvalidField(format!("h must be >= 0, got {h}")));
    }
    Ok(linspace(n_theta, TAU)
        .flat_map(|theta| linspace(n_phi, PI).map(move |phi| FeatureRow::unlabeled(theta, phi, h)))
        .collect())
}

/// Union of [`angle_grid`]s, one per field strength, in the given order.
pub fn full_grid(h_values: &[f64], n_theta: usize, n_phi: usize) -> Result<Vec<FeatureRow>> {
    if h_values.is_empty() {
        return Err(Error::EmptyInput("h_values"));
    }
    let mut rows = Vec::with_capacity(h_values.len() * n_theta * n_phi);
    for &h in h_values {
        if !(h > 0.0) {
            return Err(Error::InvalidField(format!("sweep field strengths must be > 0, got {h}")));
        }
        rows.extend(angle_grid(n_theta, n_phi, h)?);
    }
    Ok(rows)
}

/// `{0.25, 0.5, …, 2.0}` in units of `J`.
pub fn default_h_values() -> Vec<f64> {
    (1..=8).map(|k| 0.25 * k as f64).collect()
}

/// Analyses every row in parallel and maps each outcome through `f`.
/// Output order follows `rows` regardless of the worker count.
pub fn sweep<T: Send>(
    rows: &[FeatureRow],
    scenario: &Scenario,
    workers: usize,
    f: impl Fn(&FeatureRow, QuenchOutcome) -> T + Sync,
) -> Result<Vec<Result<T>>> {
    let analyzer = QuenchAnalyzer::new(*scenario)?;
    with_workers(workers, || {
        rows.par_iter()
            .map(|row| {
                let field = row.field()?;
                analyzer.analyze(&field).map(|outcome| f(row, outcome))
            })
            .collect()
    })
}

pub fn timestamp_now() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()).unwrap_or_else(|| {
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs())
    })
}

/// Labels every row. Rows whose analysis fails stay unlabeled and are listed
/// in `meta.failures`; the sweep itself does not abort.
pub fn generate_labels(rows: &[FeatureRow], scenario: &Scenario, workers: usize) -> Result<LabeledDataset> {
    let results = sweep(rows, scenario, workers, |_, outcome| outcome.report.label)?;
    Ok(assemble(rows, scenario, results))
}

/// Builds a dataset from per-row labelling results.
pub fn assemble(rows: &[FeatureRow], scenario: &Scenario, results: Vec<Result<Label>>) -> LabeledDataset {
    let mut failures = Vec::new();
    let rows = rows
        .iter()
        .zip(results)
        .enumerate()
        .map(|(i, (row, result))| {
            let label = match result {
                Ok(label) => Some(label),
                Err(e) => {
                    log::warn!("row {i} ({:?}) failed: {e}", row);
                    failures.push(RowFailure { row: i, message: e.to_string() });
                    None
                }
            };
            FeatureRow { label, ..*row }
        })
        .collect();
    LabeledDataset {
        rows,
        meta: DatasetMeta {
            scenario: *scenario,
            grid: None,
            seed: scenario.system.seed,
            generated_unix: timestamp_now(),
            failures,
        },
    }
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn with_grid(mut self, grid: GridSpec) -> Self {
        self.meta.grid = Some(grid);
        self
    }

    /// Labels as `±1.0`; unlabeled rows map to `None`.
    pub fn labels(&self) -> Vec<Option<Label>> {
        self.rows.iter().map(|r| r.label).collect()
    }

    /// Indices of labeled rows.
    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.rows.len()).filter(|&i| self.rows[i].label.is_some()).collect()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.rows.iter().filter(|r| r.label == Some(Label::Positive)).count();
        let neg = self.rows.iter().filter(|r| r.label == Some(Label::Negative)).count();
        (pos, neg)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self { rows: indices.iter().map(|&i| self.rows[i]).collect(), meta: self.meta.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.rows.len());
        for (i, row) in self.rows.iter().enumerate() {
            row.validate().map_err(|message| Error::Validation { row: i + 1, message })?;
            if !seen.insert(row.key()) {
                return Err(Error::Validation { row: i + 1, message: "duplicate (theta, phi, h) triple".into() });
            }
        }
        Ok(())
    }

    pub fn write_csv_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for row in &self.rows {
            let label = row.label.map(|l| l.to_string()).unwrap_or_default();
            w.write_record([fmt17(row.theta), fmt17(row.phi), fmt17(row.h), label])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn csv_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_csv_to(&mut buf)?;
        Ok(buf)
    }

    /// SHA-256 over the CSV rendering and the scenario; independent of the
    /// generation timestamp.
    pub fn fingerprint(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        hasher.update(self.csv_bytes()?);
        hasher.update(serde_json::to_vec(&self.meta.scenario)?);
        Ok(hex::encode(hasher.finalize()))
    }

    /// Writes `path` (CSV) and its JSON sidecar.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.csv_bytes()?)?;
        std::fs::write(sidecar_path(path), serde_json::to_vec_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let rows = read_rows(std::fs::File::open(path)?)?;
        let meta: DatasetMeta = serde_json::from_slice(&std::fs::read(sidecar_path(path))?)?;
        let dataset = Self { rows, meta };
        dataset.validate()?;
        Ok(dataset)
    }
}

/// `data.csv` → `data.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Parses CSV rows; row numbers in errors count the header as row 0.
pub fn read_rows<R: Read>(input: R) -> Result<Vec<FeatureRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = reader.headers()?.clone();
    for (position, expected) in CSV_HEADER.iter().enumerate() {
        match headers.get(position) {
            Some(found) if found == *expected => {}
            Some(found) => {
                return Err(Error::Schema {
                    row: 0,
                    column: (*expected).into(),
                    message: format!("expected column '{expected}' at position {position}, found '{found}'"),
                })
            }
            None => return Err(Error::Schema { row: 0, column: (*expected).into(), message: "missing column".into() }),
        }
    }
    if headers.len() != CSV_HEADER.len() {
        return Err(Error::Schema {
            row: 0,
            column: headers.get(CSV_HEADER.len()).unwrap_or_default().into(),
            message: format!("expected {} columns, found {}", CSV_HEADER.len(), headers.len()),
        });
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Schema { row, column: String::new(), message: e.to_string() })?;
        let number = |col: usize| -> Result<f64> {
            record[col].trim().parse().map_err(|e| Error::Schema {
                row,
                column: CSV_HEADER[col].into(),
                message: format!("'{}': {e}", &record[col]),
            })
        };
        let label = match record[3].trim() {
            "" => None,
            text => {
                let v: i64 = text.parse().map_err(|e| Error::Schema {
                    row,
                    column: "label".into(),
                    message: format!("'{text}': {e}"),
                })?;
                Some(Label::try_from(v).map_err(|e| Error::Schema {
                    row,
                    column: "label".into(),
                    message: e.to_string(),
                })?)
            }
        };
        let parsed = FeatureRow { theta: number(0)?, phi: number(1)?, h: number(2)?, label };
        parsed.validate().map_err(|message| Error::Validation { row, message })?;
        rows.push(parsed);
    }
    Ok(rows)
}

/// Seeded uniform permutation split into `(train, test)` index sets.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    if n < MIN_SPLIT_ROWS {
        return Err(Error::InsufficientData(format!("need at least {MIN_SPLIT_ROWS} rows to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let test = order.split_off(n_train);
    Ok((order, test))
}

/// Splits the labeled rows of `dataset`; unlabeled rows go to neither part.
pub fn split(dataset: &LabeledDataset, train_fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    let labeled = dataset.labeled_indices();
    let (train, test) = split_indices(labeled.len(), train_fraction, seed)?;
    let pick = |idx: &[usize]| dataset.subset(&idx.iter().map(|&i| labeled[i]).collect::<Vec<_>>());
    Ok((pick(&train), pick(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin_model::SystemConfig;

    fn scenario() -> Scenario {
        Scenario::closed(SystemConfig::new(2, 0.5).unwrap())
    }

    fn toy(n: usize) -> LabeledDataset {
        let rows = angle_grid(n, 3, 0.6).unwrap();
        let results = rows.iter().enumerate().map(|(i, _)| Ok(Label::from_sign(i as f64 % 3.0 - 1.0))).collect();
        assemble(&rows, &scenario(), results)
    }

    #[test]
    fn corner_grid() {
        let rows = angle_grid(2, 2, 0.6).unwrap();
        let corners: Vec<(f64, f64)> = rows.iter().map(|r| (r.theta, r.phi)).collect();
        assert_eq!(corners, vec![(0.0, 0.0), (0.0, PI), (TAU, 0.0), (TAU, PI)]);
        assert_eq!(angle_grid(100, 100, 0.6).unwrap().len(), 10_000);
        assert_eq!(angle_grid(200, 200, 0.6).unwrap().len(), 40_000);
        assert!(angle_grid(1, 5, 0.6).is_err());
    }

    #[test]
    fn full_grid_sizes() {
        assert_eq!(full_grid(&default_h_values(), 50, 50).unwrap().len(), 20_000);
        assert_eq!(full_grid(&[0.6], 7, 5).unwrap(), angle_grid(7, 5, 0.6).unwrap());
        assert_eq!(full_grid(&[1.0], 2, 2).unwrap().len(), 4);
        assert!(full_grid(&[], 2, 2).is_err());
        assert!(full_grid(&[0.0], 2, 2).is_err());
        assert_eq!(default_h_values().last(), Some(&2.0));
    }

    #[test]
    fn zero_field_rows_are_negative() {
        let rows = angle_grid(4, 3, 0.0).unwrap();
        let ds = generate_labels(&rows, &scenario(), 2).unwrap();
        assert!(ds.rows.iter().all(|r| r.label == Some(Label::Negative)));
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let rows = angle_grid(5, 4, 0.6).unwrap();
        let a = generate_labels(&rows, &scenario(), 1).unwrap();
        let b = generate_labels(&rows, &scenario(), 3).unwrap();
        assert_eq!(a.csv_bytes().unwrap(), b.csv_bytes().unwrap());
        assert_eq!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
    }

    #[test]
    fn failures_are_recorded_not_defaulted() {
        let rows = angle_grid(2, 2, 0.6).unwrap();
        let results = vec![
            Ok(Label::Positive),
            Err(Error::EigensolverFailure { dim: 4 }),
            Ok(Label::Negative),
            Ok(Label::Negative),
        ];
        let ds = assemble(&rows, &scenario(), results);
        assert_eq!(ds.rows[1].label, None);
        assert_eq!(ds.meta.failures.len(), 1);
        assert_eq!(ds.labeled_indices(), vec![0, 2, 3]);
    }

    #[test]
    fn split_examples() {
        let (train, test) = split_indices(10_000, 0.7, 42).unwrap();
        assert_eq!((train.len(), test.len()), (7000, 3000));
        assert_eq!(split_indices(10_000, 0.7, 42).unwrap(), (train.clone(), test.clone()));
        let mut all: Vec<usize> = train.into_iter().chain(test).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10_000).collect::<Vec<_>>());
        assert!(split_indices(9, 0.7, 1).is_err());
        assert!(split_indices(100, 1.0, 1).is_err());
        assert_ne!(split_indices(100, 0.7, 1).unwrap(), split_indices(100, 0.7, 2).unwrap());
    }

    #[test]
    fn split_skips_unlabeled_rows() {
        let mut ds = toy(6);
        ds.rows[0].label = None;
        let (train, test) = split(&ds, 0.5, 3).unwrap();
        assert_eq!(train.len() + test.len(), ds.len() - 1);
        assert!(train.rows.iter().chain(&test.rows).all(|r| r.label.is_some()));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let mut ds = toy(5).with_grid(GridSpec { h_values: vec![0.6], n_theta: 5, n_phi: 3 });
        ds.rows[2].label = None;
        ds.write_csv(&path).unwrap();
        let back = LabeledDataset::read_csv(&path).unwrap();
        assert_eq!(back, ds);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("theta,phi,h,label\n"));
        assert!(text.contains("6.2831853071795862e0"));
    }

    #[test]
    fn schema_errors_name_position() {
        let err = read_rows("theta,phi,h\n0,0,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Schema { row: 0, ref column, .. } if column == "label"), "{err}");
        let err = read_rows("theta,phi,h,label\n0,0,1,1\n0,x,1,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Schema { row: 2, ref column, .. } if column == "phi"), "{err}");
        let err = read_rows("theta,phi,h,label\n0,0,1,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Schema { row: 1, ref column, .. } if column == "label"), "{err}");
    }

    #[test]
    fn out_of_range_angles_rejected() {
        let err = read_rows("theta,phi,h,label\n0,0,1,1\n7.0,0,1,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Validation { row: 2, .. }), "{err}");
        let err = read_rows("theta,phi,h,label\n0,3.2,1,-1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Validation { row: 1, .. }), "{err}");
    }

    #[test]
    fn duplicates_rejected() {
        let mut ds = toy(3);
        ds.rows[1] = ds.rows[0];
        assert!(matches!(ds.validate(), Err(Error::Validation { row: 2, .. })));
    }

    #[test]
    fn fingerprint_ignores_timestamp() {
        let a = toy(4);
        let mut b = a.clone();
        b.meta.generated_unix += 100;
        assert_eq!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
        b.rows[0].label = Some(Label::Positive);
        b.rows[1].label = Some(Label::Positive);
        assert_ne!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
    }
}
