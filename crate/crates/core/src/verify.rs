//! Runtime invariant suite behind `quench verify`.
//!
//! Every check is self-contained, seeded, and reports a one-line detail
//! string; a check fails either by returning `Ok(false)` or by erroring.

use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureRow;
use crate::dynamics::{
    evolve_closed, inversion_test_overlap, trotter_propagate, ClosedPropagator, DensityOperator, DriveSpec,
    DrivenPropagator, LindbladPropagator, NoiseChannel, NoiseSpec, TimeGrid,
};
use crate::error::Result;
use crate::kernels::{
    build_gram, compute_states, mixed_overlap, pure_overlap, DenseKernel, KernelMatrix, KernelMethod, KernelSpec,
    SubMatrix,
};
use crate::linalg::{self, CMatrix, CVector};
use crate::singularity::{label_field, Label, QuenchAnalyzer, QuenchMode, Scenario, WindowParams};
use crate::spin_model::{
    build_hamiltonian, build_observable, interaction_hamiltonian, manifold_states, FieldVector, ObservableKind,
    PureState, SystemConfig,
};
use crate::svm::{decision, qp_oracle_small, train, TrainConfig};

pub const ALPHAS: [f64; 4] = [0.25, 0.5, 1.0, 2.0];

/// Deliberate corruptions used to prove that checks can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Adds an anti-Hermitian perturbation to every Hamiltonian inspected by
    /// the `hermiticity` check.
    Hermiticity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Skip the slower studies (Gram suite, label refinement).
    pub quick: bool,
    pub fault: Option<Fault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seed: 7, quick: false, fault: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

type Check = fn(&VerifyOptions) -> Result<(bool, String)>;

/// All checks in run order.
pub const CHECKS: &[(&str, Check)] = &[
    ("kac_extensivity", kac_extensivity),
    ("hermiticity", hermiticity),
    ("parity_symmetry", parity_symmetry),
    ("manifold_states", manifold_check),
    ("unitarity", unitarity),
    ("driven_limit", driven_limit),
    ("lindblad_contract", lindblad_contract),
    ("trotter_monotone", trotter_monotone),
    ("trotter_inversion", trotter_inversion),
    ("stationary_label", stationary_label),
    ("crossing_refinement", crossing_refinement),
    ("rotation_symmetry", rotation_symmetry),
    ("overlap_consistency", overlap_consistency),
    ("gram_invariants", gram_invariants),
    ("smo_oracle", smo_oracle),
    ("smo_permutation", smo_permutation),
    ("label_refinement", label_refinement),
];

const SLOW: &[&str] = &["gram_invariants", "label_refinement"];

pub fn run_check(name: &str, options: &VerifyOptions) -> Option<CheckResult> {
    let (_, check) = CHECKS.iter().find(|(n, _)| *n == name)?;
    let start = Instant::now();
    let (passed, detail) = match check(options) {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    Some(CheckResult { name: name.to_owned(), passed, detail, seconds: start.elapsed().as_secs_f64() })
}

pub fn run_all(options: &VerifyOptions) -> VerifyReport {
    let checks = CHECKS
        .iter()
        .filter(|(name, _)| !(options.quick && SLOW.contains(name)))
        .filter_map(|(name, _)| {
            let r = run_check(name, options)?;
            log::info!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            Some(r)
        })
        .collect();
    VerifyReport { checks }
}

fn rng(options: &VerifyOptions, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(options.seed.wrapping_mul(0x9e37_79b9).wrapping_add(salt))
}

fn random_field(rng: &mut ChaCha8Rng, h_lo: f64, h_hi: f64) -> FieldVector {
    let h = rng.random_range(h_lo..h_hi);
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let phi = rng.random_range(0.0..std::f64::consts::PI);
    FieldVector::new(h, theta, phi).expect("sampled field in range")
}

fn random_state(rng: &mut ChaCha8Rng, dim: usize) -> PureState {
    let v = CVector::from_fn(dim, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    PureState::normalized(v).expect("nonzero random vector")
}

fn kac_extensivity(_: &VerifyOptions) -> Result<(bool, String)> {
    let mut worst_energy = 0.0f64;
    let mut worst_split = 0.0f64;
    let mut min_gap = f64::INFINITY;
    for n in 2..=8 {
        for alpha in ALPHAS {
            let h0 = interaction_hamiltonian(&SystemConfig::new(n, alpha)?)?;
            let values = linalg::eigh(h0.matrix())?.values;
            worst_energy = worst_energy.max((values[0] + n as f64).abs());
            worst_split = worst_split.max(values[1] - values[0]);
            min_gap = min_gap.min(values[2] - values[1]);
        }
    }
    let ok = worst_energy < 1e-9 && worst_split < 1e-9 && min_gap > 1e-9;
    Ok((ok, format!("|E0 + N| ≤ {worst_energy:.1e}, E1 − E0 ≤ {worst_split:.1e}, E2 − E1 ≥ {min_gap:.3}")))
}

fn hermiticity(options: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = rng(options, 1);
    let mut worst = 0.0f64;
    for n in 2..=5 {
        let config = SystemConfig::new(n, rng.random_range(0.1..3.0))?;
        let mut matrices: Vec<CMatrix> =
            vec![build_hamiltonian(&config, &random_field(&mut rng, 0.0, 2.0))?.into_matrix()];
        for kind in [
            ObservableKind::Parity,
            ObservableKind::MagnetizationX,
            ObservableKind::MagnetizationY,
            ObservableKind::MagnetizationZ,
        ] {
            matrices.push(build_observable(n, kind)?.into_matrix());
        }
        for mut m in matrices {
            if options.fault == Some(Fault::Hermiticity) {
                m[(0, 1)] += Complex64::new(1e-6, 0.0);
            }
            worst = worst.max(linalg::hermiticity_deviation(&m));
        }
    }
    Ok((worst <= 1e-12, format!("max |A − A†| = {worst:.1e}")))
}

fn parity_symmetry(_: &VerifyOptions) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for n in 2..=6 {
        let h0 = interaction_hamiltonian(&SystemConfig::new(n, 0.5)?)?;
        let parity = build_observable(n, ObservableKind::Parity)?;
        let comm = h0.matrix() * parity.matrix() - parity.matrix() * h0.matrix();
        worst = worst.max(comm.iter().map(|z| z.norm()).fold(0.0, f64::max));
    }
    Ok((worst <= 1e-12, format!("max |[H0, O]| = {worst:.1e}")))
}

fn manifold_check(_: &VerifyOptions) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for n in 2..=6 {
        let config = SystemConfig::new(n, 0.5)?;
        let pair = manifold_states(&config)?;
        let h0 = interaction_hamiltonian(&config)?;
        worst = worst.max(pair.plus.inner(&pair.minus)?.norm());
        for g in [&pair.plus, &pair.minus] {
            worst = worst.max((h0.expectation(g)? + n as f64).abs());
        }
    }
    Ok((worst <= 1e-9, format!("orthogonality and ⟨H0⟩ = −N to {worst:.1e}")))
}

fn unitarity(options: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = rng(options, 2);
    let (mut norm_dev, mut overlap_dev) = (0.0f64, 0.0f64);
    for n in 2..=4 {
        let config = SystemConfig::new(n, 0.5)?;
        let h = build_hamiltonian(&config, &random_field(&mut rng, 0.3, 2.0))?;
        let (a, b) = (random_state(&mut rng, config.dim()), random_state(&mut rng, config.dim()));
        let grid = TimeGrid::new(50.0, 5000)?;
        let ta = evolve_closed(&h, &a, &grid)?;
        let tb = evolve_closed(&h, &b, &grid)?;
        let initial = a.inner(&b)?;
        for (sa, sb) in ta.states.iter().zip(&tb.states) {
            norm_dev = norm_dev.max((sa.amplitudes().norm() - 1.0).abs());
            overlap_dev = overlap_dev.max((sa.inner(sb)? - initial).norm());
        }
    }
    Ok((
        norm_dev <= 1e-10 && overlap_dev <= 1e-9,
        format!("norm drift {norm_dev:.1e}, overlap drift {overlap_dev:.1e}"),
    ))
}

fn driven_limit(options: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = rng(options, 3);
    let config = SystemConfig::new(2, 0.5)?;
    let field = random_field(&mut rng, 0.5, 1.5);
    let psi0 = manifold_states(&config)?.minus;
    let grid = TimeGrid::new(20.0, 20_000)?;
    let driven = DrivenPropagator::new(&config, &field, DriveSpec { amplitude: 0.0, frequency: 1.2 })?;
    let closed = ClosedPropagator::new(&build_hamiltonian(&config, &field)?)?;
    let mut worst = 0.0f64;
    driven.for_each_state(psi0.amplitudes(), &grid, |_, t, psi| {
        let exact = closed.propagate(psi0.amplitudes(), t);
        worst = worst.max(1.0 - exact.dotc(psi).norm_sqr());
    })?;
    Ok((worst <= 1e-8, format!("max infidelity {worst:.1e} over T = 20")))
}

fn lindblad_contract(options: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = rng(options, 4);
    let (mut trace_dev, mut herm_dev, mut min_eig) = (0.0f64, 0.0f64, f64::INFINITY);
    for draw in 0..20 {
        let config = SystemConfig::new(2, 0.5)?;
        let field = random_field(&mut rng, 0.2, 2.0);
        let channel = if draw % 2 == 0 { NoiseChannel::SpontaneousEmission } else { NoiseChannel::PhaseDamping };
        let rate: f64 = rng.random_range(0.005..0.2);
        let t_end = (5.0 / rate).min(40.0);
        let grid = TimeGrid::with_max_step(t_end, 1e-2)?;
        let propagator = LindbladPropagator::new(&config, &field, NoiseSpec { channel, rate })?;
        let rho0 = DensityOperator::from_pure(&manifold_states(&config)?.minus);
        let mut failure = None;
        propagator.for_each_state(rho0.matrix(), &grid, |k, _, rho| {
            trace_dev = trace_dev.max((rho.trace().re - 1.0).abs());
            herm_dev = herm_dev.max(linalg::hermiticity_deviation(rho));
            if k % 50 == 0 {
                match linalg::eigh(rho) {
                    Ok(e) => min_eig = min_eig.min(e.values[0]),
                    Err(e) => failure = Some(e),
                }
            }
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
    }
    let ok = trace_dev <= 1e-6 && herm_dev <= 1e-8 && min_eig >= -1e-6;
    Ok((ok, format!("trace drift {trace_dev:.1e}, |ρ − ρ†| {herm_dev:.1e}, min eigenvalue {min_eig:.1e}")))
}

fn trotter_setup() -> Result<(SystemConfig, FieldVector, PureState)> {
    let config = SystemConfig::new(2, 0.5)?;
    let field = FieldVector::new(0.6, 1.5 * std::f64::consts::PI, std::f64::consts::FRAC_PI_2)?;
    let psi0 = manifold_states(&config)?.minus;
    Ok((config, field, psi0))
}

/// `1 − F` of the first-order Trotter state against the exact one.
pub fn trotter_infidelity(n_steps: usize, t: f64) -> Result<f64> {
    let (config, field, psi0) = trotter_setup()?;
    let exact = ClosedPropagator::new(&build_hamiltonian(&config, &field)?)?.propagate(psi0.amplitudes(), t);
    let approx = trotter_propagate(&config, &field, t, n_steps, &psi0)?;
    Ok(1.0 - exact.dotc(approx.amplitudes()).norm_sqr())
}

fn trotter_monotone(_: &VerifyOptions) -> Result<(bool, String)> {
    let infidelities: Vec<f64> = (0..=8).map(|k| trotter_infidelity(1 << k, 1.0)).collect::<Result<_>>()?;
    let ok = infidelities.windows(2).all(|w| w[1] < w[0]);
    Ok((ok, format!("1 − F from {:.2e} (n = 1) to {:.2e} (n = 256)", infidelities[0], infidelities[8])))
}

/// Inversion-test estimate and exact `|⟨ψ_m|ψ_m'⟩|²` for a pair of fields.
pub fn inversion_pair(n_steps: usize) -> Result<(f64, f64)> {
    let (config, field_a, psi0) = trotter_setup()?;
    let field_b = FieldVector::new(0.6, 1.3 * std::f64::consts::PI, std::f64::consts::FRAC_PI_2)?;
    let t = 1.0;
    let estimate = inversion_test_overlap(&config, &field_a, t, &field_b, t, n_steps, &psi0)?;
    let a = ClosedPropagator::new(&build_hamiltonian(&config, &field_a)?)?.propagate(psi0.amplitudes(), t);
    let b = ClosedPropagator::new(&build_hamiltonian(&config, &field_b)?)?.propagate(psi0.amplitudes(), t);
    Ok((estimate, a.dotc(&b).norm_sqr()))
}

fn trotter_inversion(_: &VerifyOptions) -> Result<(bool, String)> {
    let (estimate, exact) = inversion_pair(1000)?;
    let diff = (estimate - exact).abs();
    Ok((diff < 1e-3, format!("|inversion − exact| = {diff:.1e} at n = 1000")))
}

fn stationary_label(_: &VerifyOptions) -> Result<(bool, String)> {
    let mut ok = true;
    for mode in [
        QuenchMode::Closed,
        QuenchMode::Driven(DriveSpec { amplitude: 0.05, frequency: 1.2 }),
        QuenchMode::Open(NoiseSpec { channel: NoiseChannel::SpontaneousEmission, rate: 0.02 }),
    ] {
        let scenario = Scenario::closed(SystemConfig::new(2, 0.5)?).with_mode(mode);
        ok &= label_field(&scenario, &FieldVector::zero())?.label == Label::Negative;
    }
    let outcome = QuenchAnalyzer::new(Scenario::closed(SystemConfig::new(3, 0.5)?))?
        .with_trace(true)
        .analyze(&FieldVector::new(1.2, 1.5 * std::f64::consts::PI, std::f64::consts::FRAC_PI_2)?)?;
    let lambda0 = outcome.trace.as_ref().map_or(f64::NAN, |t| t[0].lambda);
    ok &= lambda0.abs() < 1e-12;
    Ok((ok, format!("h = 0 labels −1 in all modes; λ(0) = {lambda0:.1e}")))
}

fn crossing_refinement(options: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = rng(options, 5);
    let config = SystemConfig::new(2, 0.5)?;
    let pair = manifold_states(&config)?;
    let analyzer = QuenchAnalyzer::new(Scenario::closed(config))?;
    let (mut worst, mut count) = (0.0f64, 0usize);
    for _ in 0..10 {
        let field = random_field(&mut rng, 0.4, 1.5);
        let report = analyzer.analyze(&field)?.report;
        let propagator = ClosedPropagator::new(&build_hamiltonian(&config, &field)?)?;
        for &t in &report.crossing_times {
            let psi = propagator.propagate(pair.minus.amplitudes(), t);
            let diff = pair.plus.amplitudes().dotc(&psi).norm_sqr() - pair.minus.amplitudes().dotc(&psi).norm_sqr();
            worst = worst.max(diff.abs());
            count += 1;
        }
    }
    Ok((worst < 1e-4, format!("{count} crossings, max |P+ − P−| = {worst:.1e}")))
}

/// Rotation by `beta` about the x axis (the interaction axis).
pub fn rotate_about_x(field: &FieldVector, beta: f64) -> FieldVector {
    let [x, y, z] = field.cartesian();
    let (s, c) = beta.sin_cos();
    FieldVector::from_cartesian([x, c * y - s * z, s * y + c * z])
}

fn rotation_symmetry(options: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = rng(options, 6);
    let scenario = Scenario::closed(SystemConfig::new(2, 0.5)?);
    let analyzer = QuenchAnalyzer::new(scenario)?;
    let mut agree = 0usize;
    let total = 100;
    for _ in 0..total {
        let field = random_field(&mut rng, 0.4, 1.5);
        let rotated = rotate_about_x(&field, rng.random_range(0.0..std::f64::consts::TAU));
        if analyzer.analyze(&field)?.report.label == analyzer.analyze(&rotated)?.report.label {
            agree += 1;
        } else {
            log::warn!("rotation changed the label at {field:?}");
        }
    }
    let fraction = agree as f64 / total as f64;
    Ok((fraction >= 0.99, format!("{agree}/{total} labels invariant under rotations about x")))
}

fn overlap_consistency(options: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = rng(options, 7);
    let mut worst = 0.0f64;
    for k in 0..100 {
        let dim = 1 << (2 + k % 3);
        let (a, b) = (random_state(&mut rng, dim), random_state(&mut rng, dim));
        let mixed = mixed_overlap(&DensityOperator::from_pure(&a), &DensityOperator::from_pure(&b))?;
        worst = worst.max((mixed - pure_overlap(&a, &b)?).abs());
    }
    Ok((worst <= 1e-10, format!("max |Tr ρσ − |⟨a|b⟩|²| = {worst:.1e} over 100 pairs")))
}

/// Worst unit-diagonal, symmetry and range deviations plus the minimum
/// eigenvalue of a dense kernel matrix.
pub fn gram_stats(k: &impl KernelMatrix) -> Result<(f64, f64, f64)> {
    let n = k.size();
    let (mut diag, mut asym, mut range) = (0.0f64, 0.0f64, 0.0f64);
    let mut dense = nalgebra::DMatrix::zeros(n, n);
    for i in 0..n {
        diag = diag.max((k.get(i, i) - 1.0).abs());
        for j in 0..n {
            let v = k.get(i, j);
            dense[(i, j)] = v;
            asym = asym.max((v - k.get(j, i)).abs());
            range = range.max((-v).max(v - 1.0).max(0.0));
        }
    }
    let min = linalg::symmetric_eigenvalues(dense)?[0];
    Ok((diag.max(asym).max(range), min, n as f64))
}

fn gram_invariants(options: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = rng(options, 8);
    let (mut worst_struct, mut worst_min) = (0.0f64, f64::INFINITY);
    let modes =
        [QuenchMode::Closed, QuenchMode::Open(NoiseSpec { channel: NoiseChannel::SpontaneousEmission, rate: 0.02 })];
    for k in 0..20 {
        let mode = modes[(k / 2) % 2];
        let spec = if k % 2 == 0 { KernelSpec::gsk_default() } else { KernelSpec::dsk_default() };
        let n_qubits = if matches!(mode, QuenchMode::Closed) { 2 + k % 3 } else { 2 };
        let scenario = Scenario::closed(SystemConfig::new(n_qubits, 0.5)?).with_mode(mode);
        let size = if matches!(spec.method, KernelMethod::Dsk) {
            rng.random_range(20..=60)
        } else {
            rng.random_range(50..=200)
        };
        let rows: Vec<FeatureRow> = (0..size)
            .map(|_| {
                let f = random_field(&mut rng, 0.8, 2.0);
                FeatureRow::unlabeled(f.theta, f.phi, f.h)
            })
            .collect();
        let states = compute_states(&rows, &scenario, &spec, 1)?;
        let gram = build_gram(&states.states, &spec, "", 1)?;
        let (structural, min, _) = gram_stats(&gram)?;
        worst_struct = worst_struct.max(structural);
        worst_min = worst_min.min(min);
    }
    let ok = worst_struct <= 1e-12 && worst_min >= -1e-8;
    Ok((ok, format!("20 Grams: structural deviation {worst_struct:.1e}, min eigenvalue {worst_min:.1e}")))
}

/// Random unit-diagonal PSD matrix of size `n` (normalised `BBᵀ`).
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> DenseKernel {
    let rank = rng.random_range(2..=n.max(2));
    let b: Vec<Vec<f64>> = (0..n).map(|_| (0..rank).map(|_| rng.random::<f64>() - 0.3).collect()).collect();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, c)| a * c).sum::<f64>();
    let norms: Vec<f64> = b.iter().map(|r| dot(r, r).sqrt()).collect();
    let entries = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            if i == j {
                1.0
            } else {
                dot(&b[i], &b[j]) / (norms[i] * norms[j])
            }
        })
        .collect();
    DenseKernel::new(n, entries).expect("square")
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<Label> {
    let mut labels: Vec<Label> = (0..n).map(|_| Label::from_sign(rng.random::<f64>() - 0.5)).collect();
    labels[0] = Label::Positive;
    labels[1] = Label::Negative;
    labels
}

/// KKT tolerance used when comparing SMO against the oracle.
pub const ORACLE_KKT_TOL: f64 = 1e-9;

fn smo_oracle(options: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = rng(options, 9);
    let (mut worst_obj, mut worst_dec, mut worst_eq) = (0.0f64, 0.0f64, 0.0f64);
    let mut box_ok = true;
    for _ in 0..50 {
        let n = rng.random_range(4..=20);
        let full = random_psd(&mut rng, n + 5);
        let idx: Vec<usize> = (0..n).collect();
        let gram = SubMatrix::new(&full, &idx);
        let labels = random_labels(&mut rng, n);
        let c = [0.1, 1.0, 10.0][rng.random_range(0..3)];
        let smo = train(&gram, &labels, &TrainConfig::new(c).with_kkt_tol(ORACLE_KKT_TOL))?;
        let oracle = qp_oracle_small(&gram, &labels, c)?;
        worst_obj = worst_obj.max((smo.objective - oracle.objective).abs());
        worst_eq = worst_eq.max(smo.equality_residual().abs());
        box_ok &= smo.coefficients.iter().all(|&a| a > 0.0 && a <= c);
        for test in n..n + 5 {
            let row: Vec<f64> = (0..n).map(|j| full.get(test, j)).collect();
            worst_dec = worst_dec.max((decision(&smo, &row)? - decision(&oracle, &row)?).abs());
        }
    }
    let ok = worst_obj <= 1e-6 && worst_dec <= 1e-4 && worst_eq <= 1e-8 && box_ok;
    Ok((
        ok,
        format!("50 instances: |Δobjective| {worst_obj:.1e}, |Δdecision| {worst_dec:.1e}, |Σcy| {worst_eq:.1e}, box {box_ok}"),
    ))
}

fn smo_permutation(options: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = rng(options, 10);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let n = rng.random_range(10..=40);
        let full = random_psd(&mut rng, n + 5);
        let idx: Vec<usize> = (0..n).collect();
        let mut perm = idx.clone();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let labels = random_labels(&mut rng, n);
        let permuted_labels: Vec<Label> = perm.iter().map(|&i| labels[i]).collect();
        let config = TrainConfig::new(1.0).with_kkt_tol(1e-12);
        let a = train(&SubMatrix::new(&full, &idx), &labels, &config)?;
        let b = train(&SubMatrix::new(&full, &perm), &permuted_labels, &config)?;
        for test in n..n + 5 {
            let row: Vec<f64> = idx.iter().map(|&j| full.get(test, j)).collect();
            let row_p: Vec<f64> = perm.iter().map(|&j| full.get(test, j)).collect();
            worst = worst.max((decision(&a, &row)? - decision(&b, &row_p)?).abs());
        }
    }
    Ok((worst <= 1e-8, format!("max decision change under permutation {worst:.1e}")))
}

/// Labels on 20 random fields at `dt` and `dt/2`; returns the agreement count.
pub fn refinement_study(options: &VerifyOptions, n_points: usize) -> Result<(usize, usize)> {
    let mut rng = rng(options, 11);
    let base = Scenario::closed(SystemConfig::new(2, 0.5)?);
    let fine = Scenario { window: WindowParams { dt: base.window.dt / 2.0, ..base.window }, ..base };
    let (coarse, fine) = (QuenchAnalyzer::new(base)?, QuenchAnalyzer::new(fine)?);
    let mut agree = 0;
    for _ in 0..n_points {
        let field = random_field(&mut rng, 0.4, 1.5);
        if coarse.analyze(&field)?.report.label == fine.analyze(&field)?.report.label {
            agree += 1;
        }
    }
    Ok((agree, n_points))
}

fn label_refinement(options: &VerifyOptions) -> Result<(bool, String)> {
    let (agree, total) = refinement_study(options, 20)?;
    Ok((agree == total, format!("{agree}/{total} labels unchanged under dt → dt/2")))
}
