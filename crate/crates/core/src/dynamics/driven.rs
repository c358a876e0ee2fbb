use serde::{Deserialize, Serialize};

use super::{PureTrajectory, TimeGrid};
use crate::error::{Error, Result};
use crate::linalg::{is_down, site_mask, CMatrix, CVector, ONE, ZERO};
use crate::spin_model::{build_hamiltonian, check_dim, FieldVector, PureState, SystemConfig};

/// `B_z(t) = amplitude · sin(frequency · t)` added along `Σ σ_z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveSpec {
    pub amplitude: f64,
    pub frequency: f64,
}

impl DriveSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) || !self.frequency.is_finite() {
            return Err(Error::InvalidConfig(format!("invalid drive {self:?}")));
        }
        Ok(())
    }

    pub fn field_at(&self, t: f64) -> f64 {
        self.amplitude * (self.frequency * t).sin()
    }
}

/// Largest tolerated norm change in a single RK4 step.
pub const MAX_STEP_DRIFT: f64 = 1e-6;

/// Fixed-step RK4 for `i dψ/dt = [H_s + B_z(t) Σ σ_z] ψ`.
#[derive(Debug, Clone)]
pub struct DrivenPropagator {
    static_part: CMatrix,
    /// Diagonal of `Σ_i σ_z^i`.
    z_total: Vec<f64>,
    drive: DriveSpec,
}

impl DrivenPropagator {
    pub fn new(config: &SystemConfig, field: &FieldVector, drive: DriveSpec) -> Result<Self> {
        drive.validate()?;
        let static_part = build_hamiltonian(config, field)?.into_matrix();
        let n = config.n_qubits;
        let z_total = (0..config.dim())
            .map(|index| (0..n).map(|s| if is_down(index, site_mask(n, s)) { -1.0 } else { 1.0 }).sum())
            .collect();
        Ok(Self { static_part, z_total, drive })
    }

    pub fn dim(&self) -> usize {
        self.z_total.len()
    }

    /// `out = -i H(t) ψ`.
    fn rhs(&self, t: f64, psi: &CVector, out: &mut CVector) {
        out.gemv(ONE, &self.static_part, psi, ZERO);
        let b = self.drive.field_at(t);
        for ((o, p), z) in out.iter_mut().zip(psi.iter()).zip(&self.z_total) {
            let hpsi = *o + p * (b * z);
            // -i (a + ib) = b - ia
            *o = num_complex::Complex64::new(hpsi.im, -hpsi.re);
        }
    }

    /// One RK4 step of size `h` from time `t`, in place. No renormalisation.
    fn rk4(&self, t: f64, h: f64, psi: &mut CVector, scratch: &mut [CVector; 5]) {
        let [k1, k2, k3, k4, tmp] = scratch;
        self.rhs(t, psi, k1);
        tmp.copy_from(psi);
        tmp.axpy((0.5 * h).into(), k1, ONE);
        self.rhs(t + 0.5 * h, tmp, k2);
        tmp.copy_from(psi);
        tmp.axpy((0.5 * h).into(), k2, ONE);
        self.rhs(t + 0.5 * h, tmp, k3);
        tmp.copy_from(psi);
        tmp.axpy(h.into(), k3, ONE);
        self.rhs(t + h, tmp, k4);
        let w = h / 6.0;
        psi.axpy(w.into(), k1, ONE);
        psi.axpy((2.0 * w).into(), k2, ONE);
        psi.axpy((2.0 * w).into(), k3, ONE);
        psi.axpy(w.into(), k4, ONE);
    }

    /// Advances `psi` from `t` by a single sub-step `h` (used for root refinement).
    pub fn step(&self, t: f64, h: f64, psi: &CVector) -> CVector {
        let mut out = psi.clone();
        let mut scratch = std::array::from_fn(|_| CVector::zeros(self.dim()));
        self.rk4(t, h, &mut out, &mut scratch);
        let norm = out.norm();
        out.unscale_mut(norm);
        out
    }

    /// Streams the renormalised state at every grid point. Returns the largest
    /// per-step norm drift seen before renormalisation.
    pub fn for_each_state(
        &self,
        psi0: &CVector,
        grid: &TimeGrid,
        mut visit: impl FnMut(usize, f64, &CVector),
    ) -> Result<f64> {
        let dim = self.dim();
        let dt = grid.dt();
        let mut psi = psi0.clone();
        let mut scratch = std::array::from_fn(|_| CVector::zeros(dim));
        let mut worst = 0.0_f64;
        for k in 0..grid.len() {
            let t = grid.time(k);
            visit(k, t, &psi);
            if k + 1 == grid.len() {
                break;
            }
            self.rk4(t, dt, &mut psi, &mut scratch);
            let norm = psi.norm();
            let drift = (norm - 1.0).abs();
            if drift > MAX_STEP_DRIFT || !norm.is_finite() {
                return Err(Error::StepSizeTooCoarse { step: k, drift });
            }
            worst = worst.max(drift);
            psi.unscale_mut(norm);
        }
        Ok(worst)
    }
}

pub fn evolve_driven(
    config: &SystemConfig,
    field: &FieldVector,
    drive: DriveSpec,
    psi0: &PureState,
    grid: &TimeGrid,
) -> Result<PureTrajectory> {
    let propagator = DrivenPropagator::new(config, field, drive)?;
    check_dim(propagator.dim(), psi0.dim())?;
    let mut states = Vec::with_capacity(grid.len());
    propagator.for_each_state(psi0.amplitudes(), grid, |_, _, psi| {
        states.push(PureState::from_trusted(psi.clone()));
    })?;
    Ok(PureTrajectory { grid: *grid, states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::evolve_closed;
    use crate::spin_model::manifold_states;

    fn terminal(config: &SystemConfig, field: &FieldVector, drive: DriveSpec, n_steps: usize) -> CVector {
        let psi0 = manifold_states(config).unwrap().minus;
        let grid = TimeGrid::new(5.0, n_steps).unwrap();
        let p = DrivenPropagator::new(config, field, drive).unwrap();
        let mut last = CVector::zeros(config.dim());
        p.for_each_state(psi0.amplitudes(), &grid, |_, _, s| last.copy_from(s)).unwrap();
        last
    }

    #[test]
    fn zero_drive_matches_closed_evolution() {
        let config = SystemConfig::new(2, 0.5).unwrap();
        let field = FieldVector::new(0.95, 1.2, 0.9).unwrap();
        let psi0 = manifold_states(&config).unwrap().minus;
        let grid = TimeGrid::new(20.0, 2000).unwrap();
        let drive = DriveSpec { amplitude: 0.0, frequency: 1.2 };
        let driven = evolve_driven(&config, &field, drive, &psi0, &grid).unwrap();
        let h = build_hamiltonian(&config, &field).unwrap();
        let closed = evolve_closed(&h, &psi0, &grid).unwrap();
        for (a, b) in driven.states.iter().zip(&closed.states) {
            assert!(1.0 - a.inner(b).unwrap().norm_sqr() < 1e-6);
        }
    }

    #[test]
    fn drive_vanishes_at_zero() {
        let drive = DriveSpec { amplitude: 0.3, frequency: 1.7 };
        assert_eq!(drive.field_at(0.0), 0.0);
    }

    #[test]
    fn fourth_order_self_convergence() {
        let config = SystemConfig::new(2, 0.5).unwrap();
        let field = FieldVector::new(0.95, 0.7, 1.1).unwrap();
        let drive = DriveSpec { amplitude: 0.4, frequency: 1.2 };
        let reference = terminal(&config, &field, drive, 16_000);
        let errors: Vec<f64> =
            [250, 500, 1000].iter().map(|&n| (terminal(&config, &field, drive, n) - &reference).norm()).collect();
        for w in errors.windows(2) {
            let slope = (w[0] / w[1]).log2();
            assert!((3.5..=4.5).contains(&slope), "slope {slope}, errors {errors:?}");
        }
    }

    #[test]
    fn coarse_step_is_rejected() {
        let config = SystemConfig::new(2, 0.5).unwrap();
        let field = FieldVector::new(2.0, 0.7, 1.1).unwrap();
        let drive = DriveSpec { amplitude: 0.1, frequency: 1.0 };
        let psi0 = manifold_states(&config).unwrap().minus;
        let grid = TimeGrid::new(10.0, 20).unwrap();
        assert!(matches!(evolve_driven(&config, &field, drive, &psi0, &grid), Err(Error::StepSizeTooCoarse { .. })));
    }
}
