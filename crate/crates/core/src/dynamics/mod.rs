//! Time evolution of pure and mixed states.
//!
//! Every propagator offers a streaming `for_each_state` that visits the state
//! at each grid point without storing the trajectory; the `evolve_*`
//! functions collect those visits into a full trajectory.

mod driven;
mod lindblad;
mod trotter;

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector};
use crate::spin_model::{check_dim, HermitianOperator, PureState};

pub use driven::{evolve_driven, DriveSpec, DrivenPropagator};
pub use lindblad::{evolve_lindblad, LindbladPropagator, NoiseChannel, NoiseSpec};
pub use trotter::{inversion_test_overlap, trotter_propagate, TrotterCircuit};

/// Uniform grid `t_k = k·T/n_steps`, `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(Error::InvalidConfig(format!("time window must be > 0, got {t_end}")));
        }
        if n_steps < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 steps, got {n_steps}")));
        }
        Ok(Self { t_end, n_steps })
    }

    /// Grid covering `[0, t_end]` with spacing at most `max_dt`.
    pub fn with_max_step(t_end: f64, max_dt: f64) -> Result<Self> {
        if !(max_dt > 0.0) {
            return Err(Error::InvalidConfig(format!("time step must be > 0, got {max_dt}")));
        }
        Self::new(t_end, ((t_end / max_dt).ceil() as usize).max(2))
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }

    /// Number of grid points (`n_steps + 1`).
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t_end * k as f64 / self.n_steps as f64
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|k| self.time(k))
    }

    /// Same window, step halved.
    pub fn refined(&self) -> Self {
        Self { t_end: self.t_end, n_steps: self.n_steps * 2 }
    }
}

/// Unit-trace positive semidefinite Hermitian matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    matrix: CMatrix,
}

impl DensityOperator {
    pub const HERMITICITY_TOL: f64 = 1e-8;
    pub const TRACE_TOL: f64 = 1e-6;
    pub const POSITIVITY_TOL: f64 = 1e-6;

    pub fn new(matrix: CMatrix) -> Result<Self> {
        let rho = Self { matrix };
        rho.validate()?;
        Ok(rho)
    }

    pub fn from_pure(psi: &PureState) -> Self {
        Self { matrix: linalg::outer(psi.amplitudes()) }
    }

    /// `I/d`.
    pub fn maximally_mixed(dim: usize) -> Self {
        Self { matrix: CMatrix::identity(dim, dim).unscale(dim as f64) }
    }

    pub(crate) fn from_trusted(matrix: CMatrix) -> Self {
        Self { matrix }
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.matrix;
        if !m.is_square() {
            return Err(Error::InvalidDensity("matrix is not square".into()));
        }
        let dev = linalg::hermiticity_deviation(m);
        if dev > Self::HERMITICITY_TOL {
            return Err(Error::InvalidDensity(format!("not Hermitian (deviation {dev:e})")));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > Self::TRACE_TOL {
            return Err(Error::InvalidDensity(format!("trace {tr} != 1")));
        }
        let min = self.min_eigenvalue()?;
        if min < -Self::POSITIVITY_TOL {
            return Err(Error::InvalidDensity(format!("negative eigenvalue {min:e}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        let hermitian = (&self.matrix + self.matrix.adjoint()).unscale(2.0);
        Ok(linalg::eigh(&hermitian)?.values[0])
    }

    /// `⟨ψ|ρ|ψ⟩`.
    pub fn population(&self, psi: &PureState) -> Result<f64> {
        check_dim(self.dim(), psi.dim())?;
        Ok(linalg::expectation(&self.matrix, psi.amplitudes()).re)
    }
}

#[derive(Debug, Clone)]
pub struct PureTrajectory {
    pub grid: TimeGrid,
    pub states: Vec<PureState>,
}

#[derive(Debug, Clone)]
pub struct MixedTrajectory {
    pub grid: TimeGrid,
    pub states: Vec<DensityOperator>,
}

#[derive(Debug, Clone)]
pub enum Trajectory {
    Pure(PureTrajectory),
    Mixed(MixedTrajectory),
}

impl Trajectory {
    pub fn grid(&self) -> &TimeGrid {
        match self {
            Trajectory::Pure(t) => &t.grid,
            Trajectory::Mixed(t) => &t.grid,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Trajectory::Pure(t) => t.states.first().map_or(0, PureState::dim),
            Trajectory::Mixed(t) => t.states.first().map_or(0, DensityOperator::dim),
        }
    }
}

impl From<PureTrajectory> for Trajectory {
    fn from(t: PureTrajectory) -> Self {
        Trajectory::Pure(t)
    }
}

impl From<MixedTrajectory> for Trajectory {
    fn from(t: MixedTrajectory) -> Self {
        Trajectory::Mixed(t)
    }
}

/// Exact propagator `exp(-iHt)` from one eigendecomposition of `H`.
#[derive(Debug, Clone)]
pub struct ClosedPropagator {
    energies: Vec<f64>,
    vectors: CMatrix,
}

/// Phases are advanced by multiplication and re-seeded exactly this often.
const PHASE_RESYNC: usize = 512;

impl ClosedPropagator {
    pub fn new(h: &HermitianOperator) -> Result<Self> {
        let eig = linalg::eigh(h.matrix())?;
        Ok(Self { energies: eig.values, vectors: eig.vectors })
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Eigenbasis coefficients `V†ψ`.
    fn coefficients(&self, psi0: &CVector) -> CVector {
        self.vectors.ad_mul(psi0)
    }

    pub fn propagate(&self, psi0: &CVector, t: f64) -> CVector {
        let mut c = self.coefficients(psi0);
        for (ck, e) in c.iter_mut().zip(&self.energies) {
            *ck *= Complex64::from_polar(1.0, -e * t);
        }
        &self.vectors * c
    }

    pub fn for_each_state(&self, psi0: &CVector, grid: &TimeGrid, mut visit: impl FnMut(usize, f64, &CVector)) {
        let c0 = self.coefficients(psi0);
        let dt = grid.dt();
        let step: Vec<Complex64> = self.energies.iter().map(|e| Complex64::from_polar(1.0, -e * dt)).collect();
        let mut u = c0.clone();
        let mut psi = CVector::zeros(self.dim());
        for k in 0..grid.len() {
            let t = grid.time(k);
            if k % PHASE_RESYNC == 0 && k > 0 {
                for ((uk, ck), e) in u.iter_mut().zip(c0.iter()).zip(&self.energies) {
                    *uk = ck * Complex64::from_polar(1.0, -e * t);
                }
            }
            psi.gemv(linalg::ONE, &self.vectors, &u, linalg::ZERO);
            visit(k, t, &psi);
            for (uk, w) in u.iter_mut().zip(&step) {
                *uk *= w;
            }
        }
    }
}

pub fn evolve_closed(h: &HermitianOperator, psi0: &PureState, grid: &TimeGrid) -> Result<PureTrajectory> {
    check_dim(h.dim(), psi0.dim())?;
    let propagator = ClosedPropagator::new(h)?;
    let mut states = Vec::with_capacity(grid.len());
    propagator.for_each_state(psi0.amplitudes(), grid, |_, _, psi| {
        states.push(PureState::from_trusted(psi.clone()));
    });
    Ok(PureTrajectory { grid: *grid, states })
}

/// Imaginary parts above this are treated as a fault rather than rounding.
const IMAGINARY_RESIDUE_TOL: f64 = 1e-9;

/// `⟨A⟩(t)` along a trajectory.
pub fn expectation_series(trajectory: &Trajectory, observable: &HermitianOperator) -> Result<Vec<f64>> {
    let dim = observable.dim();
    let values: Vec<Complex64> = match trajectory {
        Trajectory::Pure(t) => t
            .states
            .iter()
            .map(|s| {
                check_dim(dim, s.dim())?;
                Ok(linalg::expectation(observable.matrix(), s.amplitudes()))
            })
            .collect::<Result<_>>()?,
        Trajectory::Mixed(t) => t
            .states
            .iter()
            .map(|s| {
                check_dim(dim, s.dim())?;
                Ok(linalg::trace_product(observable.matrix(), s.matrix()))
            })
            .collect::<Result<_>>()?,
    };
    values
        .into_iter()
        .map(|z| {
            if z.im.abs() > IMAGINARY_RESIDUE_TOL * z.re.abs().max(1.0) {
                Err(Error::InvalidConfig(format!("expectation has imaginary part {}", z.im)))
            } else {
                Ok(z.re)
            }
        })
        .collect()
}

/// One row of a trajectory dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub p_plus: f64,
    pub p_minus: f64,
    pub lambda: f64,
    pub m_x: f64,
}

/// CSV with header `t,P_plus,P_minus,lambda,m_x`, 17 significant digits.
pub fn write_trace_csv<W: Write>(mut out: W, rows: &[TraceRow]) -> Result<()> {
    writeln!(out, "t,P_plus,P_minus,lambda,m_x")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", fmt17(r.t), fmt17(r.p_plus), fmt17(r.p_minus), fmt17(r.lambda), fmt17(r.m_x))?;
    }
    Ok(())
}

/// Decimal float with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}
