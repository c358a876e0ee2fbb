//! First-order product-formula propagator built from one- and two-qubit
//! rotations `R_σ(θ) = exp(-iθσ/2)`, `R_XX(θ) = exp(-iθ σx⊗σx/2)`.
//!
//! One step applies `R_Z`, `R_Y`, `R_X` on every site followed by `R_XX` over
//! every ordered pair, with angles `Δ_β = -2 h_β t/n` and `-2 J_ij t/n`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{site_mask, CVector};
use crate::spin_model::{check_dim, coupling_matrix, FieldVector, PureState, SystemConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Gate {
    X { mask: usize, theta: f64 },
    Y { mask: usize, theta: f64 },
    Z { mask: usize, theta: f64 },
    Xx { masks: usize, theta: f64 },
}

impl Gate {
    fn inverse(self) -> Self {
        match self {
            Gate::X { mask, theta } => Gate::X { mask, theta: -theta },
            Gate::Y { mask, theta } => Gate::Y { mask, theta: -theta },
            Gate::Z { mask, theta } => Gate::Z { mask, theta: -theta },
            Gate::Xx { masks, theta } => Gate::Xx { masks, theta: -theta },
        }
    }

    fn apply(self, psi: &mut CVector) {
        match self {
            Gate::X { mask, theta } => {
                let (s, c) = (theta / 2.0).sin_cos();
                let mis = Complex64::new(0.0, -s);
                for a in (0..psi.len()).filter(|a| a & mask == 0) {
                    let (up, dn) = (psi[a], psi[a | mask]);
                    psi[a] = up * c + dn * mis;
                    psi[a | mask] = up * mis + dn * c;
                }
            }
            Gate::Y { mask, theta } => {
                let (s, c) = (theta / 2.0).sin_cos();
                for a in (0..psi.len()).filter(|a| a & mask == 0) {
                    let (up, dn) = (psi[a], psi[a | mask]);
                    psi[a] = up * c - dn * s;
                    psi[a | mask] = up * s + dn * c;
                }
            }
            Gate::Z { mask, theta } => {
                let up_phase = Complex64::from_polar(1.0, -theta / 2.0);
                let dn_phase = up_phase.conj();
                for (a, amp) in psi.iter_mut().enumerate() {
                    *amp *= if a & mask == 0 { up_phase } else { dn_phase };
                }
            }
            Gate::Xx { masks, theta } => {
                let (s, c) = (theta / 2.0).sin_cos();
                let mis = Complex64::new(0.0, -s);
                // Pair each index with its doubly-flipped partner once.
                for a in 0..psi.len() {
                    let b = a ^ masks;
                    if a < b {
                        let (pa, pb) = (psi[a], psi[b]);
                        psi[a] = pa * c + pb * mis;
                        psi[b] = pa * mis + pb * c;
                    }
                }
            }
        }
    }
}

/// A repeated Trotter step, stored as its gate list.
#[derive(Debug, Clone)]
pub struct TrotterCircuit {
    dim: usize,
    step: Vec<Gate>,
    repetitions: usize,
}

impl TrotterCircuit {
    pub fn new(config: &SystemConfig, field: &FieldVector, t: f64, n_steps: usize) -> Result<Self> {
        config.validate()?;
        if n_steps == 0 {
            return Err(Error::InvalidConfig("trotter step count must be >= 1".into()));
        }
        let n = config.n_qubits;
        let tau = t / n_steps as f64;
        let [hx, hy, hz] = field.cartesian();
        let mut step = Vec::with_capacity(3 * n + n * (n - 1));
        for site in 0..n {
            let mask = site_mask(n, site);
            step.push(Gate::Z { mask, theta: -2.0 * hz * tau });
            step.push(Gate::Y { mask, theta: -2.0 * hy * tau });
            step.push(Gate::X { mask, theta: -2.0 * hx * tau });
        }
        let couplings = coupling_matrix(n, config.alpha, config.j_coupling)?;
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                step.push(Gate::Xx {
                    masks: site_mask(n, i) | site_mask(n, j),
                    theta: -2.0 * couplings.get(i, j) * tau,
                });
            }
        }
        Ok(Self { dim: config.dim(), step, repetitions: n_steps })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gate_count(&self) -> usize {
        self.step.len() * self.repetitions
    }

    pub fn apply(&self, psi: &mut CVector) {
        for _ in 0..self.repetitions {
            for gate in &self.step {
                gate.apply(psi);
            }
        }
    }

    /// Applies `U†` gate by gate: reversed order, negated angles.
    pub fn apply_adjoint(&self, psi: &mut CVector) {
        for _ in 0..self.repetitions {
            for gate in self.step.iter().rev() {
                gate.inverse().apply(psi);
            }
        }
    }
}

pub fn trotter_propagate(
    config: &SystemConfig,
    field: &FieldVector,
    t: f64,
    n_steps: usize,
    psi0: &PureState,
) -> Result<PureState> {
    let circuit = TrotterCircuit::new(config, field, t, n_steps)?;
    check_dim(circuit.dim(), psi0.dim())?;
    let mut psi = psi0.amplitudes().clone();
    circuit.apply(&mut psi);
    Ok(PureState::from_trusted(psi))
}

/// `|⟨ψ₀| U†(h_m, t_m) U(h_m', t_m') |ψ₀⟩|²` with both propagators trotterized.
pub fn inversion_test_overlap(
    config: &SystemConfig,
    field_m: &FieldVector,
    t_m: f64,
    field_mp: &FieldVector,
    t_mp: f64,
    n_steps: usize,
    psi_init: &PureState,
) -> Result<f64> {
    let forward = TrotterCircuit::new(config, field_mp, t_mp, n_steps)?;
    let backward = TrotterCircuit::new(config, field_m, t_m, n_steps)?;
    check_dim(forward.dim(), psi_init.dim())?;
    let mut psi = psi_init.amplitudes().clone();
    forward.apply(&mut psi);
    backward.apply_adjoint(&mut psi);
    Ok(psi_init.amplitudes().dotc(&psi).norm_sqr().clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ClosedPropagator;
    use crate::spin_model::{build_hamiltonian, manifold_states};

    fn setup() -> (SystemConfig, FieldVector, PureState) {
        let config = SystemConfig::new(2, 0.5).unwrap();
        let field = FieldVector::new(0.6, 1.3 * std::f64::consts::PI, 0.5 * std::f64::consts::PI).unwrap();
        let psi0 = manifold_states(&config).unwrap().minus;
        (config, field, psi0)
    }

    fn exact(config: &SystemConfig, field: &FieldVector, t: f64, psi0: &PureState) -> CVector {
        let h = build_hamiltonian(config, field).unwrap();
        ClosedPropagator::new(&h).unwrap().propagate(psi0.amplitudes(), t)
    }

    #[test]
    fn zero_time_is_identity() {
        let (config, field, psi0) = setup();
        let out = trotter_propagate(&config, &field, 0.0, 7, &psi0).unwrap();
        assert!((out.amplitudes() - psi0.amplitudes()).norm() < 1e-15);
    }

    #[test]
    fn zero_field_is_exact_for_two_qubits() {
        let (config, _, psi0) = setup();
        let field = FieldVector::zero();
        let reference = exact(&config, &field, 2.5, &psi0);
        for n in [1, 3, 10] {
            let out = trotter_propagate(&config, &field, 2.5, n, &psi0).unwrap();
            assert!(1.0 - reference.dotc(out.amplitudes()).norm_sqr() < 1e-12);
        }
    }

    #[test]
    fn gates_follow_standard_convention() {
        let theta: f64 = 0.8;
        let (s, c) = (theta / 2.0).sin_cos();
        let mut psi = PureState::basis(2, 0).into_amplitudes();
        Gate::Z { mask: 1, theta }.apply(&mut psi);
        assert!((psi[0] - Complex64::from_polar(1.0, -theta / 2.0)).norm() < 1e-15);
        let mut psi = PureState::basis(2, 0).into_amplitudes();
        Gate::X { mask: 1, theta }.apply(&mut psi);
        assert!((psi[1] - Complex64::new(0.0, -s)).norm() < 1e-15);
        let mut psi = PureState::basis(2, 0).into_amplitudes();
        Gate::Y { mask: 1, theta }.apply(&mut psi);
        assert!((psi[1] - Complex64::new(s, 0.0)).norm() < 1e-15);
        let mut psi = PureState::basis(4, 0).into_amplitudes();
        Gate::Xx { masks: 3, theta }.apply(&mut psi);
        assert!((psi[0] - Complex64::new(c, 0.0)).norm() < 1e-15);
        assert!((psi[3] - Complex64::new(0.0, -s)).norm() < 1e-15);
    }

    #[test]
    fn adjoint_undoes_circuit() {
        let (config, field, psi0) = setup();
        let circuit = TrotterCircuit::new(&config, &field, 2.0, 9).unwrap();
        let mut psi = psi0.amplitudes().clone();
        circuit.apply(&mut psi);
        circuit.apply_adjoint(&mut psi);
        assert!((psi - psi0.amplitudes()).norm() < 1e-13);
    }

    #[test]
    fn converges_at_first_order() {
        let (config, field, psi0) = setup();
        let reference = exact(&config, &field, 1.0, &psi0);
        let mut errors = Vec::new();
        let mut infidelities = Vec::new();
        for n in [16, 32, 64, 128, 256] {
            let out = trotter_propagate(&config, &field, 1.0, n, &psi0).unwrap();
            let overlap = reference.dotc(out.amplitudes());
            infidelities.push(1.0 - overlap.norm_sqr());
            // Phase-aligned state error.
            let phase = overlap.conj() / overlap.norm();
            errors.push((out.amplitudes() * phase - &reference).norm());
        }
        for w in errors.windows(2) {
            let slope = (w[0] / w[1]).log2();
            assert!((0.8..=1.2).contains(&slope), "{errors:?}");
        }
        assert!(infidelities.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn inversion_of_identical_pair_is_one() {
        let (config, field, psi0) = setup();
        let v = inversion_test_overlap(&config, &field, 3.0, &field, 3.0, 20, &psi0).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inversion_matches_exact_overlap() {
        let (config, field, psi0) = setup();
        let other = FieldVector::new(0.6, 0.4, 2.0).unwrap();
        let a = exact(&config, &field, 1.0, &psi0);
        let b = exact(&config, &other, 1.3, &psi0);
        let target = a.dotc(&b).norm_sqr();
        let v = inversion_test_overlap(&config, &field, 1.0, &other, 1.3, 1000, &psi0).unwrap();
        assert!((v - target).abs() < 1e-3, "{v} vs {target}");
    }

    #[test]
    fn zero_steps_rejected() {
        let (config, field, psi0) = setup();
        assert!(trotter_propagate(&config, &field, 1.0, 0, &psi0).is_err());
    }
}
