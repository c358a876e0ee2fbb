use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{kernel_value, KernelSpec, KernelState};
use crate::dataset::with_workers;
use crate::error::{Error, Result};
use crate::linalg;

/// Minimum eigenvalue below which a Gram matrix is rejected.
pub const PSD_ABORT: f64 = -1e-6;
/// Largest size checked with a dense eigensolver; above it Lanczos is used.
pub const PSD_EXACT_LIMIT: usize = 1024;
const LANCZOS_STEPS: usize = 150;
const CACHE_FORMAT: &str = "quench-gram/1";

/// Read access to a square kernel matrix.
pub trait KernelMatrix: Sync {
    fn size(&self) -> usize;
    fn get(&self, i: usize, j: usize) -> f64;
}

/// Plain row-major square matrix without Gram metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseKernel {
    n: usize,
    entries: Vec<f64>,
}

impl DenseKernel {
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::LengthMismatch { expected: n * n, found: entries.len() });
        }
        Ok(Self { n, entries })
    }

    /// `f` applied to every entry of `source`.
    pub fn from_fn(source: &impl KernelMatrix, f: impl Fn(f64) -> f64) -> Self {
        let n = source.size();
        let entries = (0..n * n).map(|k| f(source.get(k / n, k % n))).collect();
        Self { n, entries }
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

impl KernelMatrix for DenseKernel {
    fn size(&self) -> usize {
        self.n
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }
}

impl<K: KernelMatrix> KernelMatrix for &K {
    fn size(&self) -> usize {
        (**self).size()
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        (**self).get(i, j)
    }
}

/// Principal submatrix on `indices`.
#[derive(Debug, Clone, Copy)]
pub struct SubMatrix<'a, K> {
    inner: &'a K,
    indices: &'a [usize],
}

impl<'a, K: KernelMatrix> SubMatrix<'a, K> {
    pub fn new(inner: &'a K, indices: &'a [usize]) -> Self {
        Self { inner, indices }
    }
}

impl<K: KernelMatrix> KernelMatrix for SubMatrix<'_, K> {
    fn size(&self) -> usize {
        self.indices.len()
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(self.indices[i], self.indices[j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramMeta {
    pub n: usize,
    pub spec: KernelSpec,
    pub dataset_fingerprint: String,
    pub min_eigenvalue: f64,
    #[serde(default)]
    pub degenerate_rows: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    format: String,
    #[serde(flatten)]
    meta: GramMeta,
}

/// Symmetric kernel matrix with unit diagonal, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    meta: GramMeta,
    entries: Vec<f64>,
}

impl KernelMatrix for GramMatrix {
    fn size(&self) -> usize {
        self.meta.n
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.meta.n + j]
    }
}

/// Smallest eigenvalue of a row-major symmetric matrix: exact up to
/// [`PSD_EXACT_LIMIT`], Lanczos (an upper bound) beyond.
pub fn psd_check(n: usize, entries: &[f64]) -> Result<f64> {
    if n == 0 {
        return Err(Error::EmptyInput("Gram matrix"));
    }
    if n <= PSD_EXACT_LIMIT {
        let values = linalg::symmetric_eigenvalues(nalgebra::DMatrix::from_row_slice(n, n, entries))?;
        return Ok(values[0]);
    }
    linalg::lanczos_min_eigenvalue(n, LANCZOS_STEPS, n as u64, |x, y| {
        for (yi, row) in y.iter_mut().zip(entries.chunks_exact(n)) {
            *yi = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    })
}

/// Kernel matrix over `states`, upper triangle in parallel, diagonal exactly 1.
pub fn build_gram(
    states: &[KernelState],
    spec: &KernelSpec,
    dataset_fingerprint: &str,
    workers: usize,
) -> Result<GramMatrix> {
    spec.validate()?;
    let n = states.len();
    if n == 0 {
        return Err(Error::EmptyInput("states"));
    }
    let mut entries = vec![0.0; n * n];
    with_workers(workers, || {
        entries.par_chunks_mut(n).enumerate().try_for_each(|(i, row)| -> Result<()> {
            row[i] = 1.0;
            for j in i + 1..n {
                row[j] = kernel_value(&states[i], &states[j], spec)?;
            }
            Ok(())
        })
    })??;
    for i in 0..n {
        for j in 0..i {
            entries[i * n + j] = entries[j * n + i];
        }
    }
    GramMatrix::from_entries(n, entries, *spec, dataset_fingerprint.to_owned())
}

/// Kernel values of one state against every training state.
pub fn gram_row(state: &KernelState, training: &[KernelState], spec: &KernelSpec) -> Result<Vec<f64>> {
    if training.is_empty() {
        return Err(Error::EmptyInput("training states"));
    }
    training.iter().map(|t| kernel_value(state, t, spec)).collect()
}

impl GramMatrix {
    /// Wraps precomputed entries after running the PSD check.
    pub fn from_entries(n: usize, entries: Vec<f64>, spec: KernelSpec, dataset_fingerprint: String) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::LengthMismatch { expected: n * n, found: entries.len() });
        }
        let min_eigenvalue = psd_check(n, &entries)?;
        if min_eigenvalue < PSD_ABORT {
            return Err(Error::PsdViolation { min_eigenvalue });
        }
        let meta = GramMeta { n, spec, dataset_fingerprint, min_eigenvalue, degenerate_rows: Vec::new() };
        Ok(Self { meta, entries })
    }

    pub fn with_degenerate_rows(mut self, rows: Vec<usize>) -> Self {
        self.meta.degenerate_rows = rows;
        self
    }

    pub fn n(&self) -> usize {
        self.meta.n
    }

    pub fn meta(&self) -> &GramMeta {
        &self.meta
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.meta.n..(i + 1) * self.meta.n]
    }

    /// Whether a cached matrix was built for this spec and dataset.
    pub fn matches(&self, spec: &KernelSpec, dataset_fingerprint: &str) -> bool {
        self.meta.spec == *spec && self.meta.dataset_fingerprint == dataset_fingerprint
    }

    /// JSON header line followed by `n²` little-endian `f64`s.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let header = CacheHeader { format: CACHE_FORMAT.into(), meta: self.meta.clone() };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        let mut buf = Vec::with_capacity(8 * self.meta.n);
        for row in self.entries.chunks_exact(self.meta.n) {
            buf.clear();
            for v in row {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut reader = BufReader::new(input);
        let mut line = Vec::new();
        reader.read_until(b'\n', &mut line)?;
        let schema = |message: String| Error::Schema { row: 0, column: "header".into(), message };
        let header: CacheHeader =
            serde_json::from_slice(&line).map_err(|e| schema(format!("unreadable Gram header: {e}")))?;
        if header.format != CACHE_FORMAT {
            return Err(schema(format!("unknown format '{}'", header.format)));
        }
        let n = header.meta.n;
        let mut bytes = Vec::with_capacity(8 * n * n);
        reader.read_to_end(&mut bytes)?;
        if bytes.len() != 8 * n * n {
            return Err(Error::Schema {
                row: 1,
                column: "entries".into(),
                message: format!("expected {} bytes of entries, found {}", 8 * n * n, bytes.len()),
            });
        }
        let entries: Vec<f64> =
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
        for i in 0..n {
            if entries[i * n + i] != 1.0 {
                return Err(Error::Validation { row: i, message: "diagonal entry is not 1".into() });
            }
            for j in 0..i {
                if entries[i * n + j] != entries[j * n + i] {
                    return Err(Error::Validation { row: i, message: format!("asymmetric at column {j}") });
                }
            }
        }
        Ok(Self { meta: header.meta, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }

    /// SHA-256 of the serialised cache bytes.
    pub fn fingerprint(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        let mut bytes = Vec::new();
        self.write_to(&mut bytes)?;
        hasher.update(&bytes);
        Ok(hex::encode(hasher.finalize()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{KernelMap, KernelMethod};
    use crate::spin_model::PureState;

    fn qlin() -> KernelSpec {
        KernelSpec { method: KernelMethod::Gsk, map: KernelMap::Qlin }
    }

    fn basis_states(n: usize) -> Vec<KernelState> {
        (0..n).map(|i| KernelState::Pure(PureState::basis(n, i))).collect()
    }

    #[test]
    fn identical_states_give_all_ones() {
        let states = vec![KernelState::Pure(PureState::basis(4, 1)); 5];
        let g = build_gram(&states, &qlin(), "fp", 2).unwrap();
        assert!(g.entries().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn orthogonal_states_give_identity() {
        let g = build_gram(&basis_states(2), &qlin(), "fp", 1).unwrap();
        assert_eq!(g.entries(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(g.meta().min_eigenvalue, 1.0);
    }

    #[test]
    fn gram_row_examples() {
        let train = basis_states(3);
        assert_eq!(gram_row(&train[1], &train, &qlin()).unwrap(), vec![0.0, 1.0, 0.0]);
        assert!(gram_row(&train[0], &[], &qlin()).is_err());
    }

    #[test]
    fn non_psd_matrix_rejected() {
        let spec = qlin();
        let bad = vec![1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0];
        assert!(matches!(GramMatrix::from_entries(3, bad, spec, "x".into()), Err(Error::PsdViolation { .. })));
    }

    #[test]
    fn lanczos_path_agrees_with_exact() {
        let n = PSD_EXACT_LIMIT + 40;
        // Diagonally dominant with a known spectrum shift.
        let entries: Vec<f64> = (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                if i == j {
                    1.0
                } else {
                    0.5 * (-((i as f64 - j as f64).abs()) / 3.0).exp()
                }
            })
            .collect();
        let approx = psd_check(n, &entries).unwrap();
        let exact = linalg::symmetric_eigenvalues(nalgebra::DMatrix::from_row_slice(n, n, &entries)).unwrap()[0];
        assert!(approx >= exact - 1e-9);
        assert!((approx - exact).abs() < 1e-3, "{approx} vs {exact}");
    }

    #[test]
    fn cache_round_trip_and_corruption() {
        let g = build_gram(&basis_states(3), &qlin(), "abc", 1).unwrap().with_degenerate_rows(vec![2]);
        let mut bytes = Vec::new();
        g.write_to(&mut bytes).unwrap();
        let back = GramMatrix::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, g);
        assert!(back.matches(&qlin(), "abc"));
        assert!(!back.matches(&qlin(), "abd"));

        let mut corrupt = bytes.clone();
        corrupt[0] = b'#';
        assert!(matches!(GramMatrix::read_from(corrupt.as_slice()), Err(Error::Schema { row: 0, .. })));
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(GramMatrix::read_from(truncated), Err(Error::Schema { row: 1, .. })));
    }

    #[test]
    fn worker_count_is_bit_identical() {
        use crate::kernels::gsk_state;
        use crate::singularity::Scenario;
        use crate::spin_model::{FieldVector, SystemConfig};
        let s = Scenario::closed(SystemConfig::new(3, 0.5).unwrap());
        let states: Vec<KernelState> = (0..30)
            .map(|k| {
                let f = FieldVector::new(1.2, 0.2 * k as f64, 0.1 * k as f64).unwrap();
                gsk_state(&s, &f).unwrap().state
            })
            .collect();
        let spec = KernelSpec::gsk_default();
        let a = build_gram(&states, &spec, "fp", 1).unwrap();
        for w in [4, 8] {
            let b = build_gram(&states, &spec, "fp", w).unwrap();
            assert_eq!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
        }
    }
}
