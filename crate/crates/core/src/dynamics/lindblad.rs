//! Markovian master equation with one jump operator per qubit:
//!
//! ```text
//! dρ/dt = -i[H, ρ] + γ Σ_k ( L_k ρ L_k† - ½{L_k† L_k, ρ} )
//! ```
//!
//! Spontaneous emission uses `L_k = σ_x^k - iσ_y^k = 2|↓⟩⟨↑|` as written,
//! so the per-site population decay rate is `4γ`. Phase damping uses
//! `L_k = σ_z^k`. Jump terms act elementwise on `ρ` via bit masks.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{DensityOperator, MixedTrajectory, TimeGrid};
use crate::error::{Error, Result};
use crate::linalg::{self, is_down, site_mask, CMatrix, ZERO};
use crate::spin_model::{build_hamiltonian, check_dim, FieldVector, SystemConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseChannel {
    SpontaneousEmission,
    PhaseDamping,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub channel: NoiseChannel,
    pub rate: f64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate >= 0.0 && self.rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise rate must be >= 0, got {}", self.rate)));
        }
        Ok(())
    }
}

/// Minimum eigenvalue below which integration aborts.
pub const POSITIVITY_ABORT: f64 = -1e-4;
/// Steps between positivity checks.
const POSITIVITY_STRIDE: usize = 64;

#[derive(Debug, Clone)]
pub struct LindbladPropagator {
    hamiltonian: CMatrix,
    n_qubits: usize,
    noise: NoiseSpec,
}

impl LindbladPropagator {
    pub fn new(config: &SystemConfig, field: &FieldVector, noise: NoiseSpec) -> Result<Self> {
        noise.validate()?;
        Ok(Self { hamiltonian: build_hamiltonian(config, field)?.into_matrix(), n_qubits: config.n_qubits, noise })
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.nrows()
    }

    /// `out = L(ρ)`.
    fn rhs(&self, rho: &CMatrix, out: &mut CMatrix) {
        let minus_i = Complex64::new(0.0, -1.0);
        out.gemm(minus_i, &self.hamiltonian, rho, ZERO);
        out.gemm(-minus_i, rho, &self.hamiltonian, linalg::ONE);
        let gamma = self.noise.rate;
        if gamma == 0.0 {
            return;
        }
        let dim = self.dim();
        for site in 0..self.n_qubits {
            let mask = site_mask(self.n_qubits, site);
            match self.noise.channel {
                NoiseChannel::SpontaneousEmission => {
                    // L ρ L† feeds (↓,↓) from (↑,↑); L†L = 4|↑⟩⟨↑|.
                    for c in 0..dim {
                        let c_down = is_down(c, mask);
                        for r in 0..dim {
                            let r_down = is_down(r, mask);
                            let mut d = ZERO;
                            if r_down && c_down {
                                d += rho[(r ^ mask, c ^ mask)] * 4.0;
                            }
                            let anti = 2.0 * (f64::from(u8::from(!r_down)) + f64::from(u8::from(!c_down)));
                            d -= rho[(r, c)] * anti;
                            out[(r, c)] += d * gamma;
                        }
                    }
                }
                NoiseChannel::PhaseDamping => {
                    for c in 0..dim {
                        let c_down = is_down(c, mask);
                        for r in 0..dim {
                            if is_down(r, mask) != c_down {
                                out[(r, c)] -= rho[(r, c)] * (2.0 * gamma);
                            }
                        }
                    }
                }
            }
        }
    }

    fn rk4(&self, h: f64, rho: &mut CMatrix, scratch: &mut [CMatrix; 5]) {
        let [k1, k2, k3, k4, tmp] = scratch;
        self.rhs(rho, k1);
        tmp.copy_from(rho);
        axpy(tmp, 0.5 * h, k1);
        self.rhs(tmp, k2);
        tmp.copy_from(rho);
        axpy(tmp, 0.5 * h, k2);
        self.rhs(tmp, k3);
        tmp.copy_from(rho);
        axpy(tmp, h, k3);
        self.rhs(tmp, k4);
        let w = h / 6.0;
        axpy(rho, w, k1);
        axpy(rho, 2.0 * w, k2);
        axpy(rho, 2.0 * w, k3);
        axpy(rho, w, k4);
    }

    /// Advances `rho` by a single sub-step `h` (used for root refinement).
    pub fn step(&self, h: f64, rho: &CMatrix) -> CMatrix {
        let dim = self.dim();
        let mut out = rho.clone();
        let mut scratch = std::array::from_fn(|_| CMatrix::zeros(dim, dim));
        self.rk4(h, &mut out, &mut scratch);
        symmetrize(&mut out);
        out
    }

    /// Streams `ρ(t_k)` for every grid point.
    pub fn for_each_state(
        &self,
        rho0: &CMatrix,
        grid: &TimeGrid,
        mut visit: impl FnMut(usize, f64, &CMatrix),
    ) -> Result<()> {
        let dim = self.dim();
        let dt = grid.dt();
        let mut rho = rho0.clone();
        let mut scratch = std::array::from_fn(|_| CMatrix::zeros(dim, dim));
        for k in 0..grid.len() {
            let t = grid.time(k);
            if k % POSITIVITY_STRIDE == 0 || k + 1 == grid.len() {
                let min_eigenvalue = linalg::eigh(&rho)?.values[0];
                if min_eigenvalue < POSITIVITY_ABORT {
                    return Err(Error::PositivityViolation { time: t, min_eigenvalue });
                }
            }
            visit(k, t, &rho);
            if k + 1 == grid.len() {
                break;
            }
            self.rk4(dt, &mut rho, &mut scratch);
            symmetrize(&mut rho);
        }
        Ok(())
    }
}

/// `ρ ← (ρ + ρ†)/2`.
fn symmetrize(rho: &mut CMatrix) {
    let dim = rho.nrows();
    for c in 0..dim {
        for r in c..dim {
            let avg = (rho[(r, c)] + rho[(c, r)].conj()) * 0.5;
            rho[(r, c)] = avg;
            rho[(c, r)] = avg.conj();
        }
    }
}

/// `y += a x` on the raw column-major storage.
fn axpy(y: &mut CMatrix, a: f64, x: &CMatrix) {
    for (yi, xi) in y.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *yi += xi * a;
    }
}

pub fn evolve_lindblad(
    config: &SystemConfig,
    field: &FieldVector,
    noise: NoiseSpec,
    rho0: &DensityOperator,
    grid: &TimeGrid,
) -> Result<MixedTrajectory> {
    let propagator = LindbladPropagator::new(config, field, noise)?;
    check_dim(propagator.dim(), rho0.dim())?;
    let mut states = Vec::with_capacity(grid.len());
    propagator.for_each_state(rho0.matrix(), grid, |_, _, rho| {
        states.push(DensityOperator::from_trusted(rho.clone()));
    })?;
    Ok(MixedTrajectory { grid: *grid, states })
}
