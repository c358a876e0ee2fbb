//! Rate functions, `P₊/P₋` crossing detection and binary labels.
//!
//! A quench from `|G₋⟩` is labelled `+1` when the return probabilities of the
//! two degenerate ground states cross, i.e. when the rate function
//! `λ(t) = -(1/N) log max(P₊, P₋)` has a kink.

use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dynamics::{
    ClosedPropagator, DensityOperator, DriveSpec, DrivenPropagator, LindbladPropagator, NoiseSpec, TimeGrid, TraceRow,
    Trajectory,
};
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector};
use crate::spin_model::{
    build_hamiltonian, magnetization_x, magnetization_x_mixed, manifold_states, FieldVector, ManifoldPair, PureState,
    SystemConfig,
};

/// Probabilities may exceed `[0, 1]` by at most this much before clamping.
pub const PROBABILITY_EXCURSION_TOL: f64 = 1e-9;
/// Floor inside the logarithm of the rate function.
pub const LOG_FLOOR: f64 = 1e-300;
/// Crossing times are bisected to this fraction of the grid step.
pub const REFINE_FRACTION: f64 = 1e-2;
/// `⟨M_x⟩` values within this of the running maximum count as ties.
const CRITICAL_TIE_TOL: f64 = 1e-12;

/// Binary class; serialised as the integers `1` / `-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_sign(value: f64) -> Self {
        if value >= 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn value(self) -> i8 {
        match self {
            Label::Positive => 1,
            Label::Negative => -1,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.value())
    }
}

impl TryFrom<i64> for Label {
    type Error = Error;

    fn try_from(v: i64) -> Result<Self> {
        match v {
            1 => Ok(Label::Positive),
            -1 => Ok(Label::Negative),
            other => Err(Error::InvalidConfig(format!("label must be 1 or -1, got {other}"))),
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.value())
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i8(self.value())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        Label::try_from(v).map_err(serde::de::Error::custom)
    }
}

/// Evolution model used to label a quench.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuenchMode {
    Closed,
    Driven(DriveSpec),
    Open(NoiseSpec),
}

impl QuenchMode {
    pub fn validate(&self) -> Result<()> {
        match self {
            QuenchMode::Closed => Ok(()),
            QuenchMode::Driven(d) => d.validate(),
            QuenchMode::Open(n) => n.validate(),
        }
    }

    pub fn is_mixed(&self) -> bool {
        matches!(self, QuenchMode::Open(_))
    }
}

/// Observation window and crossing tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowParams {
    /// Coefficient of `(J/h)²` in the critical-time estimate.
    pub d_crit: f64,
    /// Grid step in units of `1/J`.
    pub dt: f64,
    pub crossing_tol: f64,
}

impl Default for WindowParams {
    fn default() -> Self {
        Self { d_crit: 1.0, dt: 1e-2, crossing_tol: 1e-6 }
    }
}

impl WindowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_crit >= 0.0 && self.d_crit.is_finite()) {
            return Err(Error::InvalidConfig(format!("d_crit must be >= 0, got {}", self.d_crit)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.crossing_tol >= 0.0 && self.crossing_tol < 1.0) {
            return Err(Error::InvalidConfig(format!("crossing_tol out of range: {}", self.crossing_tol)));
        }
        Ok(())
    }
}

/// Everything needed to label a field besides the field itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(flatten)]
    pub system: SystemConfig,
    pub mode: QuenchMode,
    #[serde(default)]
    pub window: WindowParams,
}

impl Scenario {
    pub fn closed(system: SystemConfig) -> Self {
        Self { system, mode: QuenchMode::Closed, window: WindowParams::default() }
    }

    pub fn with_mode(mut self, mode: QuenchMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.mode.validate()?;
        self.window.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityPair {
    pub grid: TimeGrid,
    pub p_plus: Vec<f64>,
    pub p_minus: Vec<f64>,
}

impl ProbabilityPair {
    pub fn len(&self) -> usize {
        self.p_plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_plus.is_empty()
    }

    /// `f(t_k) = P₊ − P₋`.
    pub fn difference(&self, k: usize) -> f64 {
        self.p_plus[k] - self.p_minus[k]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularityReport {
    pub label: Label,
    pub crossing_times: Vec<f64>,
    /// Signed jump `-(1/N) ΔP/P` of `dλ/dt` at each crossing.
    pub kink_jumps: Vec<f64>,
}

impl SingularityReport {
    pub fn no_crossing() -> Self {
        Self { label: Label::Negative, crossing_times: Vec::new(), kink_jumps: Vec::new() }
    }
}

/// Checks and clamps a pair of raw probabilities.
fn clamp_pair(p_plus: f64, p_minus: f64) -> Result<(f64, f64)> {
    for value in [p_plus, p_minus, p_plus + p_minus] {
        if !(value > -PROBABILITY_EXCURSION_TOL && value < 1.0 + PROBABILITY_EXCURSION_TOL) {
            return Err(Error::ProbabilityExcursion { value });
        }
    }
    Ok((p_plus.clamp(0.0, 1.0), p_minus.clamp(0.0, 1.0)))
}

fn pure_probabilities(manifold: &ManifoldPair, psi: &CVector) -> Result<(f64, f64)> {
    let p_plus = manifold.plus.amplitudes().dotc(psi).norm_sqr();
    let p_minus = manifold.minus.amplitudes().dotc(psi).norm_sqr();
    clamp_pair(p_plus, p_minus)
}

fn mixed_probabilities(manifold: &ManifoldPair, rho: &CMatrix) -> Result<(f64, f64)> {
    let p_plus = linalg::expectation(rho, manifold.plus.amplitudes()).re;
    let p_minus = linalg::expectation(rho, manifold.minus.amplitudes()).re;
    clamp_pair(p_plus, p_minus)
}

pub fn ground_probabilities(trajectory: &Trajectory, manifold: &ManifoldPair) -> Result<ProbabilityPair> {
    let dim = manifold.minus.dim();
    if trajectory.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: trajectory.dim() });
    }
    let (p_plus, p_minus) = match trajectory {
        Trajectory::Pure(t) => {
            t.states.iter().map(|s| pure_probabilities(manifold, s.amplitudes())).collect::<Result<Vec<_>>>()?
        }
        Trajectory::Mixed(t) => {
            t.states.iter().map(|s| mixed_probabilities(manifold, s.matrix())).collect::<Result<Vec<_>>>()?
        }
    }
    .into_iter()
    .unzip();
    Ok(ProbabilityPair { grid: *trajectory.grid(), p_plus, p_minus })
}

fn rate(p_plus: f64, p_minus: f64, n_qubits: usize) -> f64 {
    // `+ 0.0` turns the `-0.0` of a unit probability into `0.0`.
    -p_plus.max(p_minus).max(LOG_FLOOR).ln() / n_qubits as f64 + 0.0
}

pub fn rate_function(pair: &ProbabilityPair, n_qubits: usize) -> Vec<f64> {
    pair.p_plus.iter().zip(&pair.p_minus).map(|(&a, &b)| rate(a, b, n_qubits)).collect()
}

/// Centered-difference derivative of a sampled series (one-sided at the ends).
fn derivative(series: &[f64], k: usize, dt: f64) -> f64 {
    let last = series.len() - 1;
    match k {
        0 => (series[1] - series[0]) / dt,
        k if k == last => (series[last] - series[last - 1]) / dt,
        k => (series[k + 1] - series[k - 1]) / (2.0 * dt),
    }
}

/// Core scan. `refine(k)` returns the crossing time inside `[t_{k-1}, t_k]`.
///
/// Samples with `|f| < tol` carry no sign: a crossing needs a significant
/// sample of each sign, so tangential touches inside the band are ignored.
/// The root is bracketed by the last raw sign change between them.
fn scan_crossings(
    pair: &ProbabilityPair,
    n_qubits: usize,
    tol: f64,
    mut refine: impl FnMut(usize) -> f64,
) -> SingularityReport {
    let mut crossings = Vec::new();
    let mut last_sign: Option<bool> = None;
    let mut last_raw_change: Option<usize> = None;
    for k in 0..pair.len() {
        let f = pair.difference(k);
        if k > 0 && (pair.difference(k - 1) < 0.0) != (f < 0.0) {
            last_raw_change = Some(k);
        }
        if f.abs() < tol || f.is_nan() {
            continue;
        }
        let positive = f > 0.0;
        if let (Some(prev), Some(bracket)) = (last_sign, last_raw_change) {
            if prev != positive {
                crossings.push(bracket);
            }
        }
        last_sign = Some(positive);
    }
    if crossings.is_empty() {
        return SingularityReport::no_crossing();
    }
    let dt = pair.grid.dt();
    let mut crossing_times = Vec::with_capacity(crossings.len());
    let mut kink_jumps = Vec::with_capacity(crossings.len());
    for k in crossings {
        let t_star = refine(k);
        let w = ((t_star - pair.grid.time(k - 1)) / dt).clamp(0.0, 1.0);
        let lerp = |a: f64, b: f64| a + w * (b - a);
        let dp_plus = lerp(derivative(&pair.p_plus, k - 1, dt), derivative(&pair.p_plus, k, dt));
        let dp_minus = lerp(derivative(&pair.p_minus, k - 1, dt), derivative(&pair.p_minus, k, dt));
        let p = lerp(pair.p_plus[k - 1] + pair.p_minus[k - 1], pair.p_plus[k] + pair.p_minus[k]) / 2.0;
        crossing_times.push(t_star);
        kink_jumps.push(-(dp_plus - dp_minus) / (n_qubits as f64 * p.max(LOG_FLOOR)));
    }
    SingularityReport { label: Label::Positive, crossing_times, kink_jumps }
}

/// Crossing scan on sampled data; roots inside a bracket are located on the
/// linear interpolant of `f`.
pub fn detect_crossings(pair: &ProbabilityPair, n_qubits: usize, tol: f64) -> SingularityReport {
    scan_crossings(pair, n_qubits, tol, |k| {
        let (f0, f1) = (pair.difference(k - 1), pair.difference(k));
        let (t0, t1) = (pair.grid.time(k - 1), pair.grid.time(k));
        if f1 == f0 {
            0.5 * (t0 + t1)
        } else {
            t0 + (t1 - t0) * f0 / (f0 - f1)
        }
    })
}

/// Bisection of `f` on `[t0, t0 + dt]` using evaluations `eval(s)` at offset `s`.
fn bisect(t0: f64, dt: f64, f0: f64, mut eval: impl FnMut(f64) -> f64) -> f64 {
    let (mut lo, mut hi) = (0.0, dt);
    let negative_side = f0 < 0.0;
    while hi - lo > dt * REFINE_FRACTION {
        let mid = 0.5 * (lo + hi);
        if (eval(mid) < 0.0) == negative_side {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    t0 + 0.5 * (lo + hi)
}

/// `T = 100 (π/4 + d_crit (J/h)²) / J`, sampled with step at most `dt`.
pub fn default_window(j: f64, h: f64, d_crit: f64, dt: f64) -> Result<TimeGrid> {
    if !(h > 0.0) {
        return Err(Error::InvalidField(format!("observation window needs h > 0, got {h}")));
    }
    if !(j > 0.0) {
        return Err(Error::InvalidConfig(format!("coupling J must be > 0, got {j}")));
    }
    let t_end = 100.0 * (FRAC_PI_4 + d_crit * (j / h).powi(2)) / j;
    TimeGrid::with_max_step(t_end, dt / j)
}

/// Earliest grid time maximising `⟨M_x⟩`, with the maximum.
pub fn critical_time(trajectory: &Trajectory, n_qubits: usize) -> (f64, f64) {
    let values: Vec<f64> = match trajectory {
        Trajectory::Pure(t) => t.states.iter().map(|s| magnetization_x(n_qubits, s.amplitudes())).collect(),
        Trajectory::Mixed(t) => t.states.iter().map(|s| magnetization_x_mixed(n_qubits, s.matrix())).collect(),
    };
    let mut tracker = MaxTracker::default();
    for (k, v) in values.into_iter().enumerate() {
        tracker.offer(k, v);
    }
    let (k, v) = tracker.best.unwrap_or((0, f64::NAN));
    (trajectory.grid().time(k), v)
}

#[derive(Default)]
struct MaxTracker {
    best: Option<(usize, f64)>,
}

impl MaxTracker {
    /// Returns true when `k` becomes the new argmax.
    fn offer(&mut self, k: usize, value: f64) -> bool {
        match self.best {
            Some((_, best)) if value <= best + CRITICAL_TIE_TOL => false,
            _ => {
                self.best = Some((k, value));
                true
            }
        }
    }
}

/// Final state of a quench: pure for closed/driven, mixed for open dynamics.
#[derive(Debug, Clone, PartialEq)]
pub enum QuenchState {
    Pure(PureState),
    Mixed(DensityOperator),
}

#[derive(Debug, Clone)]
pub struct QuenchOutcome {
    pub report: SingularityReport,
    /// Earliest time of maximal `⟨M_x⟩`.
    pub critical_time: f64,
    pub m_x_max: f64,
    pub state_at_critical: QuenchState,
    /// Present only when trace recording is enabled.
    pub trace: Option<Vec<TraceRow>>,
}

/// Single streaming pass per field: labels, critical time and the state at
/// that time without storing the trajectory.
#[derive(Debug, Clone)]
pub struct QuenchAnalyzer {
    scenario: Scenario,
    manifold: ManifoldPair,
    record_trace: bool,
}

/// Per-step bookkeeping shared by all evolution modes.
struct Accumulator<S> {
    n_qubits: usize,
    p_plus: Vec<f64>,
    p_minus: Vec<f64>,
    /// Refined root for a raw sign change ending at step k.
    roots: Vec<(usize, f64)>,
    tracker: MaxTracker,
    best_state: Option<S>,
    trace: Option<Vec<TraceRow>>,
}

impl<S: Clone> Accumulator<S> {
    fn new(n_qubits: usize, len: usize, record_trace: bool) -> Self {
        Self {
            n_qubits,
            p_plus: Vec::with_capacity(len),
            p_minus: Vec::with_capacity(len),
            roots: Vec::new(),
            tracker: MaxTracker::default(),
            best_state: None,
            trace: record_trace.then(|| Vec::with_capacity(len)),
        }
    }

    /// Records one sample; returns `Some(f_prev)` when `f` changed sign.
    fn push(&mut self, k: usize, t: f64, (p_plus, p_minus): (f64, f64), m_x: f64, state: &S) -> Option<f64> {
        self.p_plus.push(p_plus);
        self.p_minus.push(p_minus);
        if self.tracker.offer(k, m_x) {
            self.best_state = Some(state.clone());
        }
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceRow { t, p_plus, p_minus, lambda: rate(p_plus, p_minus, self.n_qubits), m_x });
        }
        if k == 0 {
            return None;
        }
        let prev = self.p_plus[k - 1] - self.p_minus[k - 1];
        ((prev < 0.0) != (p_plus - p_minus < 0.0)).then_some(prev)
    }

    fn finish(self, grid: TimeGrid, tol: f64, wrap: impl FnOnce(S) -> QuenchState) -> QuenchOutcome {
        let pair = ProbabilityPair { grid, p_plus: self.p_plus, p_minus: self.p_minus };
        let roots = self.roots;
        let report = scan_crossings(&pair, self.n_qubits, tol, |k| {
            roots
                .iter()
                .find(|(step, _)| *step == k)
                .map(|(_, t)| *t)
                .expect("every raw sign change is refined during streaming")
        });
        let (k, m_x_max) = self.tracker.best.expect("grid has at least one point");
        QuenchOutcome {
            report,
            critical_time: grid.time(k),
            m_x_max,
            state_at_critical: wrap(self.best_state.expect("tracked with the maximum")),
            trace: self.trace,
        }
    }
}

impl QuenchAnalyzer {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let manifold = manifold_states(&scenario.system)?;
        Ok(Self { scenario, manifold, record_trace: false })
    }

    /// Keep per-step `(t, P₊, P₋, λ, ⟨M_x⟩)` rows in the outcome.
    pub fn with_trace(mut self, record: bool) -> Self {
        self.record_trace = record;
        self
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn manifold(&self) -> &ManifoldPair {
        &self.manifold
    }

    /// Labelling window for `field`; the driven mode also caps the step by the
    /// largest instantaneous field.
    pub fn window(&self, field: &FieldVector) -> Result<TimeGrid> {
        let w = &self.scenario.window;
        let j = self.scenario.system.j_coupling;
        let mut dt = w.dt;
        if let QuenchMode::Driven(drive) = self.scenario.mode {
            let h_total = field.h + drive.amplitude;
            dt = dt.min(0.05 * j / h_total);
        }
        default_window(j, field.h, w.d_crit, dt)
    }

    pub fn analyze(&self, field: &FieldVector) -> Result<QuenchOutcome> {
        let n = self.scenario.system.n_qubits;
        if field.h == 0.0 {
            // No quench: the initial ground state never moves.
            let psi = self.manifold.minus.clone();
            let m_x = magnetization_x(n, psi.amplitudes());
            let state = match self.scenario.mode {
                QuenchMode::Open(_) => QuenchState::Mixed(DensityOperator::from_pure(&psi)),
                _ => QuenchState::Pure(psi),
            };
            return Ok(QuenchOutcome {
                report: SingularityReport::no_crossing(),
                critical_time: 0.0,
                m_x_max: m_x,
                state_at_critical: state,
                trace: None,
            });
        }
        let grid = self.window(field)?;
        let tol = self.scenario.window.crossing_tol;
        let config = &self.scenario.system;
        let manifold = &self.manifold;
        let psi0 = manifold.minus.amplitudes();
        let dt = grid.dt();
        match self.scenario.mode {
            QuenchMode::Closed => {
                let propagator = ClosedPropagator::new(&build_hamiltonian(config, field)?)?;
                let mut acc = Accumulator::<CVector>::new(n, grid.len(), self.record_trace);
                let mut failure = None;
                propagator.for_each_state(psi0, &grid, |k, t, psi| {
                    if failure.is_some() {
                        return;
                    }
                    let probs = match pure_probabilities(manifold, psi) {
                        Ok(p) => p,
                        Err(e) => return failure = Some(e),
                    };
                    if let Some(f_prev) = acc.push(k, t, probs, magnetization_x(n, psi), psi) {
                        let t0 = grid.time(k - 1);
                        let root = bisect(t0, dt, f_prev, |s| {
                            let (a, b) = raw_pure(manifold, &propagator.propagate(psi0, t0 + s));
                            a - b
                        });
                        acc.roots.push((k, root));
                    }
                });
                if let Some(e) = failure {
                    return Err(e);
                }
                Ok(acc.finish(grid, tol, |psi| QuenchState::Pure(PureState::from_trusted(psi))))
            }
            QuenchMode::Driven(drive) => {
                let propagator = DrivenPropagator::new(config, field, drive)?;
                let mut acc = Accumulator::<CVector>::new(n, grid.len(), self.record_trace);
                let mut prev = psi0.clone();
                let mut failure = None;
                propagator.for_each_state(psi0, &grid, |k, t, psi| {
                    if failure.is_some() {
                        return;
                    }
                    let probs = match pure_probabilities(manifold, psi) {
                        Ok(p) => p,
                        Err(e) => return failure = Some(e),
                    };
                    if let Some(f_prev) = acc.push(k, t, probs, magnetization_x(n, psi), psi) {
                        let t0 = grid.time(k - 1);
                        let root = bisect(t0, dt, f_prev, |s| {
                            let (a, b) = raw_pure(manifold, &propagator.step(t0, s, &prev));
                            a - b
                        });
                        acc.roots.push((k, root));
                    }
                    prev.copy_from(psi);
                })?;
                if let Some(e) = failure {
                    return Err(e);
                }
                Ok(acc.finish(grid, tol, |psi| QuenchState::Pure(PureState::from_trusted(psi))))
            }
            QuenchMode::Open(noise) => {
                let propagator = LindbladPropagator::new(config, field, noise)?;
                let rho0 = linalg::outer(psi0);
                let mut acc = Accumulator::<CMatrix>::new(n, grid.len(), self.record_trace);
                let mut prev = rho0.clone();
                let mut failure = None;
                propagator.for_each_state(&rho0, &grid, |k, t, rho| {
                    if failure.is_some() {
                        return;
                    }
                    let probs = match mixed_probabilities(manifold, rho) {
                        Ok(p) => p,
                        Err(e) => return failure = Some(e),
                    };
                    if let Some(f_prev) = acc.push(k, t, probs, magnetization_x_mixed(n, rho), rho) {
                        let t0 = grid.time(k - 1);
                        let root = bisect(t0, dt, f_prev, |s| {
                            let (a, b) = raw_mixed(manifold, &propagator.step(s, &prev));
                            a - b
                        });
                        acc.roots.push((k, root));
                    }
                    prev.copy_from(rho);
                })?;
                if let Some(e) = failure {
                    return Err(e);
                }
                Ok(acc.finish(grid, tol, |rho| QuenchState::Mixed(DensityOperator::from_trusted(rho))))
            }
        }
    }
}

fn raw_pure(manifold: &ManifoldPair, psi: &CVector) -> (f64, f64) {
    (manifold.plus.amplitudes().dotc(psi).norm_sqr(), manifold.minus.amplitudes().dotc(psi).norm_sqr())
}

fn raw_mixed(manifold: &ManifoldPair, rho: &CMatrix) -> (f64, f64) {
    (linalg::expectation(rho, manifold.plus.amplitudes()).re, linalg::expectation(rho, manifold.minus.amplitudes()).re)
}

/// Label (with crossing times and kink jumps) of a single field.
pub fn label_field(scenario: &Scenario, field: &FieldVector) -> Result<SingularityReport> {
    Ok(QuenchAnalyzer::new(*scenario)?.analyze(field)?.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{evolve_closed, MixedTrajectory, NoiseChannel};
    use crate::spin_model::{build_hamiltonian, GroundConvention};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn pair_from(f: &[f64]) -> ProbabilityPair {
        // P₊ − P₋ = f with P₊ + P₋ = 1.
        ProbabilityPair {
            grid: TimeGrid::new((f.len() - 1) as f64, f.len() - 1).unwrap(),
            p_plus: f.iter().map(|v| (1.0 + v) / 2.0).collect(),
            p_minus: f.iter().map(|v| (1.0 - v) / 2.0).collect(),
        }
    }

    fn scenario(n: usize) -> Scenario {
        Scenario::closed(SystemConfig::new(n, 0.5).unwrap())
    }

    #[test]
    fn rate_function_examples() {
        let pair = ProbabilityPair {
            grid: TimeGrid::new(1.0, 2).unwrap(),
            p_plus: vec![0.0, 0.5, 0.2],
            p_minus: vec![1.0, 0.5, 0.2],
        };
        let lambda = rate_function(&pair, 2);
        assert_eq!(lambda[0], 0.0);
        assert_abs_diff_eq!(lambda[1], 2f64.ln() / 2.0, epsilon = 1e-15);
        let zero =
            ProbabilityPair { grid: TimeGrid::new(1.0, 2).unwrap(), p_plus: vec![0.0; 3], p_minus: vec![0.0; 3] };
        assert!(rate_function(&zero, 2).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn sign_change_bracketed_in_third_interval() {
        let pair = pair_from(&[-1.0, -0.5, 0.2, 0.4]);
        let report = detect_crossings(&pair, 2, 1e-6);
        assert_eq!(report.label, Label::Positive);
        assert_eq!(report.crossing_times.len(), 1);
        // Third sample interval is [t1, t2] = [1, 2]; linear root at 1 + 0.5/0.7.
        assert_abs_diff_eq!(report.crossing_times[0], 1.0 + 0.5 / 0.7, epsilon = 1e-12);
        assert_eq!(report.kink_jumps.len(), 1);
    }

    #[test]
    fn tangential_touch_is_not_a_crossing() {
        let report = detect_crossings(&pair_from(&[-1.0, -1e-3, 5e-7, -2e-7, -0.3]), 2, 1e-6);
        assert_eq!(report, SingularityReport::no_crossing());
        // A sign change through the band counts once.
        let report = detect_crossings(&pair_from(&[-1.0, -5e-7, 4e-7, -1e-7, 0.2]), 2, 1e-6);
        assert_eq!(report.crossing_times.len(), 1);
        assert!(report.crossing_times[0] > 3.0);
    }

    #[test]
    fn multiple_crossings_all_reported() {
        let report = detect_crossings(&pair_from(&[-1.0, 0.5, -0.5, 0.5]), 3, 1e-6);
        assert_eq!(report.crossing_times.len(), 3);
        assert_eq!(report.label, Label::Positive);
    }

    #[test]
    fn stationary_pair_has_no_crossing() {
        let report = detect_crossings(&pair_from(&[-1.0; 10]), 2, 1e-6);
        assert_eq!(report.label, Label::Negative);
    }

    #[test]
    fn window_examples() {
        let g = default_window(1.0, 1.0, 1.0, 1e-2).unwrap();
        assert_abs_diff_eq!(g.t_end(), 100.0 * (PI / 4.0 + 1.0), epsilon = 1e-12);
        assert!(g.dt() <= 1e-2);
        assert_abs_diff_eq!(default_window(1.0, 0.7, 0.0, 1e-2).unwrap().t_end(), 25.0 * PI, epsilon = 1e-12);
        assert_abs_diff_eq!(
            default_window(1.0, 0.25, 1.0, 1e-2).unwrap().t_end(),
            100.0 * (PI / 4.0 + 16.0),
            epsilon = 1e-9
        );
        assert!(default_window(1.0, 0.0, 1.0, 1e-2).is_err());
    }

    #[test]
    fn initial_probabilities_and_stationary_evolution() {
        let config = SystemConfig::new(2, 0.5).unwrap();
        let manifold = manifold_states(&config).unwrap();
        let h0 = build_hamiltonian(&config, &FieldVector::zero()).unwrap();
        let grid = TimeGrid::new(10.0, 100).unwrap();
        let traj: Trajectory = evolve_closed(&h0, &manifold.minus, &grid).unwrap().into();
        let pair = ground_probabilities(&traj, &manifold).unwrap();
        assert_abs_diff_eq!(pair.p_plus[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(pair.p_minus[0], 1.0, epsilon = 1e-9);
        assert!(pair.p_minus.iter().all(|p| (p - 1.0).abs() < 1e-9));
        let (t_c, m) = critical_time(&traj, 2);
        assert_eq!(t_c, 0.0);
        assert_abs_diff_eq!(m, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn equal_mixture_gives_half_half() {
        let config = SystemConfig::new(2, 0.5).unwrap();
        let m = manifold_states(&config).unwrap();
        let rho = (linalg::outer(m.plus.amplitudes()) + linalg::outer(m.minus.amplitudes())).unscale(2.0);
        let traj: Trajectory = MixedTrajectory {
            grid: TimeGrid::new(1.0, 2).unwrap(),
            states: vec![DensityOperator::new(rho).unwrap(); 3],
        }
        .into();
        let pair = ground_probabilities(&traj, &m).unwrap();
        assert_abs_diff_eq!(pair.p_plus[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(pair.p_minus[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn dimension_mismatch_reported() {
        let m = manifold_states(&SystemConfig::new(3, 0.5).unwrap()).unwrap();
        let config = SystemConfig::new(2, 0.5).unwrap();
        let h = build_hamiltonian(&config, &FieldVector::zero()).unwrap();
        let psi = manifold_states(&config).unwrap().minus;
        let traj: Trajectory = evolve_closed(&h, &psi, &TimeGrid::new(1.0, 2).unwrap()).unwrap().into();
        assert!(matches!(ground_probabilities(&traj, &m), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn reference_labels_two_qubits() {
        let s = scenario(2);
        let pos = FieldVector::new(0.6, 1.5 * PI, PI / 2.0).unwrap();
        let neg = FieldVector::new(0.6, 1.3 * PI, PI / 2.0).unwrap();
        assert_eq!(label_field(&s, &pos).unwrap().label, Label::Positive);
        assert_eq!(label_field(&s, &neg).unwrap().label, Label::Negative);
    }

    #[test]
    fn zero_field_short_circuits() {
        let s = scenario(2);
        let outcome = QuenchAnalyzer::new(s).unwrap().analyze(&FieldVector::zero()).unwrap();
        assert_eq!(outcome.report.label, Label::Negative);
        assert_eq!(outcome.critical_time, 0.0);
    }

    #[test]
    fn streaming_matches_stored_trajectory() {
        let s = scenario(2);
        let field = FieldVector::new(0.6, 1.5 * PI, PI / 2.0).unwrap();
        let analyzer = QuenchAnalyzer::new(s).unwrap();
        let outcome = analyzer.analyze(&field).unwrap();
        let grid = analyzer.window(&field).unwrap();
        let h = build_hamiltonian(&s.system, &field).unwrap();
        let traj: Trajectory = evolve_closed(&h, &analyzer.manifold().minus, &grid).unwrap().into();
        let pair = ground_probabilities(&traj, analyzer.manifold()).unwrap();
        let sampled = detect_crossings(&pair, 2, s.window.crossing_tol);
        assert_eq!(sampled.crossing_times.len(), outcome.report.crossing_times.len());
        for (a, b) in sampled.crossing_times.iter().zip(&outcome.report.crossing_times) {
            assert!((a - b).abs() < grid.dt());
        }
        let (t_c, m) = critical_time(&traj, 2);
        assert_eq!(t_c, outcome.critical_time);
        assert_eq!(m, outcome.m_x_max);
    }

    #[test]
    fn refined_roots_are_tight() {
        let s = scenario(2);
        let field = FieldVector::new(0.6, 1.5 * PI, PI / 2.0).unwrap();
        let analyzer = QuenchAnalyzer::new(s).unwrap();
        let report = analyzer.analyze(&field).unwrap().report;
        let h = build_hamiltonian(&s.system, &field).unwrap();
        let prop = ClosedPropagator::new(&h).unwrap();
        for t in report.crossing_times {
            let (a, b) = raw_pure(analyzer.manifold(), &prop.propagate(analyzer.manifold().minus.amplitudes(), t));
            assert!((a - b).abs() < 1e-4, "|f({t})| = {}", (a - b).abs());
        }
    }

    #[test]
    fn critical_magnetisation_sign_tracks_label() {
        let s = scenario(3);
        let analyzer = QuenchAnalyzer::new(s).unwrap();
        let pos = analyzer.analyze(&FieldVector::new(1.2, 1.5 * PI, PI / 2.0).unwrap()).unwrap();
        let neg = analyzer.analyze(&FieldVector::new(1.2, 1.3 * PI, PI / 2.0).unwrap()).unwrap();
        assert!(pos.m_x_max > 0.0, "{}", pos.m_x_max);
        assert!(neg.m_x_max < 0.0, "{}", neg.m_x_max);
    }

    #[test]
    fn open_mode_runs_and_matches_closed_at_zero_rate() {
        let base = scenario(2);
        let field = FieldVector::new(0.6, 1.5 * PI, PI / 2.0).unwrap();
        let open =
            base.with_mode(QuenchMode::Open(NoiseSpec { channel: NoiseChannel::SpontaneousEmission, rate: 0.0 }));
        let a = QuenchAnalyzer::new(base).unwrap().analyze(&field).unwrap();
        let b = QuenchAnalyzer::new(open).unwrap().analyze(&field).unwrap();
        assert_eq!(a.report.label, b.report.label);
        assert!((a.report.crossing_times[0] - b.report.crossing_times[0]).abs() < 1e-3);
        assert!(matches!(b.state_at_critical, QuenchState::Mixed(_)));
    }

    #[test]
    fn trace_rows_recorded_on_request() {
        let field = FieldVector::new(1.0, 1.5 * PI, PI / 2.0).unwrap();
        let analyzer = QuenchAnalyzer::new(scenario(2)).unwrap().with_trace(true);
        let out = analyzer.analyze(&field).unwrap();
        let rows = out.trace.unwrap();
        assert_eq!(rows.len(), analyzer.window(&field).unwrap().len());
        assert_eq!(rows[0].lambda, 0.0);
    }

    #[test]
    fn y_polarized_convention_rejected_for_analysis() {
        let mut config = SystemConfig::new(2, 0.5).unwrap();
        config.ground_convention = GroundConvention::YPolarized;
        assert!(matches!(QuenchAnalyzer::new(Scenario::closed(config)), Err(Error::ConventionMismatch { .. })));
    }

    #[test]
    fn label_serialises_as_integer() {
        let report = SingularityReport { label: Label::Positive, crossing_times: vec![1.5], kink_jumps: vec![-0.2] };
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"label\":1"));
        let back: SingularityReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        assert!(serde_json::from_str::<Label>("0").is_err());
    }

    #[test]
    fn scenario_json_is_flat() {
        let s = scenario(2).with_mode(QuenchMode::Driven(DriveSpec { amplitude: 0.1, frequency: 1.0 }));
        let v: serde_json::Value = serde_json::to_value(s).unwrap();
        assert_eq!(v["n_qubits"], 2);
        assert_eq!(v["mode"]["kind"], "driven");
        let back: Scenario = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
    }
}
