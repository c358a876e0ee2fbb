//! Long-range qubit chain: couplings, Hamiltonians, ground manifold and
//! observables in the computational basis.
//!
//! ```text
//! H_s = -Σ_{i≠j} J_ij σ_x^i σ_x^j - h·Σ_i σ_i,   J_ij = J |i-j|^{-α} / N_α
//! ```
//!
//! The pair sum runs over ordered pairs, so every bond appears twice and the
//! Kac factor `N_α = (1/N) Σ_{i≠j} |i-j|^{-α}` pins the interaction ground
//! energy at `-N·J`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, is_down, site_mask, CMatrix, CVector, ONE, ZERO};

/// Energies closer than this to the minimum count as ground-degenerate.
pub const DEGENERACY_TOL: f64 = 1e-9;

/// Which product states span the ground manifold of the interaction term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum GroundConvention {
    /// `⊗_j (|↑⟩ + η|↓⟩)/√2`, the σ_x eigenstates.
    #[default]
    #[serde(rename = "x-polarized")]
    XPolarized,
    /// `⊗_j (|↑⟩ + iη|↓⟩)/√2`, the σ_y eigenstates.
    #[serde(rename = "y-polarized")]
    YPolarized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub n_qubits: usize,
    pub alpha: f64,
    #[serde(default = "default_coupling")]
    pub j_coupling: f64,
    #[serde(default)]
    pub ground_convention: GroundConvention,
    #[serde(default)]
    pub seed: u64,
}

fn default_coupling() -> f64 {
    1.0
}

pub const MAX_QUBITS: usize = 8;

impl SystemConfig {
    pub fn new(n_qubits: usize, alpha: f64) -> Result<Self> {
        let config =
            Self { n_qubits, alpha, j_coupling: 1.0, ground_convention: GroundConvention::XPolarized, seed: 0 };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_QUBITS).contains(&self.n_qubits) {
            return Err(Error::InvalidConfig(format!("n_qubits must be in 2..={MAX_QUBITS}, got {}", self.n_qubits)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.j_coupling > 0.0 && self.j_coupling.is_finite()) {
            return Err(Error::InvalidConfig(format!("j_coupling must be > 0, got {}", self.j_coupling)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }
}

/// Magnetic field in spherical coordinates; `theta` is azimuthal, `phi` polar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldVector {
    pub h: f64,
    pub theta: f64,
    pub phi: f64,
}

impl FieldVector {
    pub fn new(h: f64, theta: f64, phi: f64) -> Result<Self> {
        if !(h >= 0.0 && h.is_finite()) {
            return Err(Error::InvalidField(format!("magnitude must be >= 0, got {h}")));
        }
        if !(0.0..=2.0 * PI).contains(&theta) {
            return Err(Error::InvalidField(format!("theta {theta} outside [0, 2π]")));
        }
        if !(0.0..=PI).contains(&phi) {
            return Err(Error::InvalidField(format!("phi {phi} outside [0, π]")));
        }
        Ok(Self { h, theta, phi })
    }

    pub fn zero() -> Self {
        Self { h: 0.0, theta: 0.0, phi: 0.0 }
    }

    pub fn from_cartesian(v: [f64; 3]) -> Self {
        let h = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if h == 0.0 {
            return Self::zero();
        }
        let phi = (v[2] / h).clamp(-1.0, 1.0).acos();
        let mut theta = v[1].atan2(v[0]);
        if theta < 0.0 {
            theta += 2.0 * PI;
        }
        Self { h, theta, phi }
    }

    pub fn cartesian(&self) -> [f64; 3] {
        let (sp, cp) = self.phi.sin_cos();
        let (st, ct) = self.theta.sin_cos();
        [self.h * sp * ct, self.h * sp * st, self.h * cp]
    }
}

/// Kac-normalised power-law couplings.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    n: usize,
    entries: Vec<f64>,
    kac_norm: f64,
}

impl CouplingMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn kac_norm(&self) -> f64 {
        self.kac_norm
    }
}

pub fn coupling_matrix(n: usize, alpha: f64, j_coupling: f64) -> Result<CouplingMatrix> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 qubits, got {n}")));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidConfig(format!("alpha must be > 0, got {alpha}")));
    }
    let decay = |i: usize, j: usize| (i.abs_diff(j) as f64).powf(-alpha);
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += decay(i, j);
            }
        }
    }
    let kac_norm = sum / n as f64;
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                entries[i * n + j] = j_coupling * decay(i, j) / kac_norm;
            }
        }
    }
    Ok(CouplingMatrix { n, entries, kac_norm })
}

/// Dense Hermitian matrix on the `2^N` dimensional register.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    matrix: CMatrix,
}

impl HermitianOperator {
    pub const TOLERANCE: f64 = 1e-12;

    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch { expected: matrix.nrows(), found: matrix.ncols() });
        }
        let deviation = linalg::hermiticity_deviation(&matrix);
        if deviation > Self::TOLERANCE {
            return Err(Error::NotHermitian { deviation });
        }
        Ok(Self { matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn expectation(&self, psi: &PureState) -> Result<f64> {
        check_dim(self.dim(), psi.dim())?;
        Ok(linalg::expectation(&self.matrix, psi.amplitudes()).re)
    }
}

/// Normalised state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amplitudes: CVector,
}

impl PureState {
    pub const TOLERANCE: f64 = 1e-10;

    pub fn new(amplitudes: CVector) -> Result<Self> {
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::NotNormalized { norm });
        }
        Ok(Self { amplitudes })
    }

    /// Rescales to unit norm. Fails on the zero vector.
    pub fn normalized(mut amplitudes: CVector) -> Result<Self> {
        let norm = amplitudes.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::NotNormalized { norm });
        }
        amplitudes.unscale_mut(norm);
        Ok(Self { amplitudes })
    }

    pub(crate) fn from_trusted(amplitudes: CVector) -> Self {
        Self { amplitudes }
    }

    pub fn basis(dim: usize, index: usize) -> Self {
        let mut v = CVector::zeros(dim);
        v[index] = ONE;
        Self { amplitudes: v }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> CVector {
        self.amplitudes
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &PureState) -> Result<Complex64> {
        check_dim(self.dim(), other.dim())?;
        Ok(linalg::inner(&self.amplitudes, &other.amplitudes))
    }

    /// Multiplies by the phase that makes the largest-magnitude amplitude real
    /// and positive. Near-ties resolve to the lowest basis index.
    pub fn fix_global_phase(&mut self) {
        let max = self.amplitudes.iter().map(|a| a.norm()).fold(0.0, f64::max);
        if max == 0.0 {
            return;
        }
        let pivot = self.amplitudes.iter().find(|a| a.norm() >= max * (1.0 - 1e-10)).copied().unwrap_or(ONE);
        let phase = pivot.conj() / pivot.norm();
        for a in self.amplitudes.iter_mut() {
            *a *= phase;
        }
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// `H_s` for the given field.
pub fn build_hamiltonian(config: &SystemConfig, field: &FieldVector) -> Result<HermitianOperator> {
    config.validate()?;
    let n = config.n_qubits;
    let dim = config.dim();
    let couplings = coupling_matrix(n, config.alpha, config.j_coupling)?;
    let [hx, hy, hz] = field.cartesian();
    let mut m = CMatrix::zeros(dim, dim);
    for col in 0..dim {
        for i in 0..n {
            let mi = site_mask(n, i);
            for j in 0..n {
                if i != j {
                    let row = col ^ mi ^ site_mask(n, j);
                    m[(row, col)] -= Complex64::new(couplings.get(i, j), 0.0);
                }
            }
            let flipped = col ^ mi;
            let down = is_down(col, mi);
            // σ_x
            m[(flipped, col)] -= Complex64::new(hx, 0.0);
            // σ_y|↑⟩ = i|↓⟩, σ_y|↓⟩ = -i|↑⟩
            let y = if down { Complex64::new(0.0, -1.0) } else { Complex64::new(0.0, 1.0) };
            m[(flipped, col)] -= y * hy;
            // σ_z
            m[(col, col)] -= Complex64::new(if down { -hz } else { hz }, 0.0);
        }
    }
    HermitianOperator::new(m)
}

/// Interaction-only Hamiltonian `H_0`.
pub fn interaction_hamiltonian(config: &SystemConfig) -> Result<HermitianOperator> {
    build_hamiltonian(config, &FieldVector::zero())
}

/// The two product states spanning the ground manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPair {
    pub plus: PureState,
    pub minus: PureState,
}

/// Builds `|G_±⟩` for a convention without checking them against `H_0`.
pub fn product_manifold_states(n_qubits: usize, convention: GroundConvention) -> ManifoldPair {
    let build = |eta: f64| {
        let down = match convention {
            GroundConvention::XPolarized => Complex64::new(eta, 0.0),
            GroundConvention::YPolarized => Complex64::new(0.0, eta),
        };
        let dim = 1usize << n_qubits;
        let scale = (dim as f64).sqrt().recip();
        let amplitudes = CVector::from_fn(dim, |index, _| {
            let mut a = Complex64::new(scale, 0.0);
            for site in 0..n_qubits {
                if is_down(index, site_mask(n_qubits, site)) {
                    a *= down;
                }
            }
            a
        });
        PureState::from_trusted(amplitudes)
    };
    ManifoldPair { plus: build(1.0), minus: build(-1.0) }
}

/// `|G_±⟩` under the configured convention, validated against the numerically
/// computed ground energy of `H_0`.
pub fn manifold_states(config: &SystemConfig) -> Result<ManifoldPair> {
    let pair = product_manifold_states(config.n_qubits, config.ground_convention);
    let h0 = interaction_hamiltonian(config)?;
    let min_eigenvalue = linalg::eigh(h0.matrix())?.values[0];
    for (eta, state) in [('+', &pair.plus), ('-', &pair.minus)] {
        let energy = h0.expectation(state)?;
        if energy > min_eigenvalue + DEGENERACY_TOL {
            return Err(Error::ConventionMismatch { eta, energy, min_eigenvalue });
        }
    }
    Ok(pair)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableKind {
    Parity,
    MagnetizationX,
    MagnetizationY,
    MagnetizationZ,
}

pub fn build_observable(n_qubits: usize, kind: ObservableKind) -> Result<HermitianOperator> {
    if n_qubits == 0 || n_qubits > 12 {
        return Err(Error::InvalidConfig(format!("unsupported qubit count {n_qubits}")));
    }
    let n = n_qubits;
    let dim = 1usize << n;
    let inv_n = 1.0 / n as f64;
    let mut m = CMatrix::zeros(dim, dim);
    for col in 0..dim {
        match kind {
            ObservableKind::Parity => {
                let sign = if col.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                m[(col, col)] = Complex64::new(sign, 0.0);
            }
            ObservableKind::MagnetizationX => {
                for site in 0..n {
                    m[(col ^ site_mask(n, site), col)] += Complex64::new(inv_n, 0.0);
                }
            }
            ObservableKind::MagnetizationY => {
                for site in 0..n {
                    let mask = site_mask(n, site);
                    let y = if is_down(col, mask) { -inv_n } else { inv_n };
                    m[(col ^ mask, col)] += Complex64::new(0.0, y);
                }
            }
            ObservableKind::MagnetizationZ => {
                let mut acc = 0.0;
                for site in 0..n {
                    acc += if is_down(col, site_mask(n, site)) { -inv_n } else { inv_n };
                }
                m[(col, col)] = Complex64::new(acc, 0.0);
            }
        }
    }
    HermitianOperator::new(m)
}

/// `⟨ψ|M_x|ψ⟩` via bit flips, without forming `M_x`.
pub fn magnetization_x(n_qubits: usize, psi: &CVector) -> f64 {
    let mut acc = 0.0;
    for site in 0..n_qubits {
        let mask = site_mask(n_qubits, site);
        for (index, a) in psi.iter().enumerate() {
            let b = psi[index ^ mask];
            acc += a.re * b.re + a.im * b.im;
        }
    }
    acc / n_qubits as f64
}

/// `Tr(ρ M_x)` for a density matrix, again without forming `M_x`.
pub fn magnetization_x_mixed(n_qubits: usize, rho: &CMatrix) -> f64 {
    let mut acc = 0.0;
    for site in 0..n_qubits {
        let mask = site_mask(n_qubits, site);
        for index in 0..rho.nrows() {
            acc += rho[(index ^ mask, index)].re;
        }
    }
    acc / n_qubits as f64
}

/// Result of [`ground_state`].
#[derive(Debug, Clone, PartialEq)]
pub struct GroundState {
    pub energy: f64,
    pub state: PureState,
    /// Spacing to the first level outside the (possibly degenerate) ground space.
    pub gap: f64,
    /// True when the minimum eigenvalue was degenerate and the tie-break applied.
    pub degenerate: bool,
}

/// Lowest eigenpair of `h`. A degenerate ground space resolves to the
/// normalised projection of `reference` onto it (the member with maximal
/// overlap); the global phase is then fixed deterministically.
pub fn ground_state(h: &HermitianOperator, reference: &PureState) -> Result<GroundState> {
    check_dim(h.dim(), reference.dim())?;
    let eig = linalg::eigh(h.matrix())?;
    let energy = eig.values[0];
    let multiplicity = eig.values.iter().take_while(|&&e| e - energy < DEGENERACY_TOL).count();
    let gap = eig.values.get(multiplicity).map_or(f64::INFINITY, |e| e - energy);
    let dim = h.dim();
    let mut vector = eig.vectors.column(0).into_owned();
    if multiplicity > 1 {
        let mut projection = CVector::from_element(dim, ZERO);
        for k in 0..multiplicity {
            let column = eig.vectors.column(k);
            let weight = column.dotc(reference.amplitudes());
            projection.axpy(weight, &column, ONE);
        }
        if projection.norm() > 1e-12 {
            vector = projection;
        }
    }
    let mut state = PureState::normalized(vector)?;
    state.fix_global_phase();
    Ok(GroundState { energy, state, gap, degenerate: multiplicity > 1 })
}
