//! Quantum kernels: ground-state (GSK) and dynamical-state (DSK) feature
//! maps, their overlaps, and the `qlin` / `qrbf` kernel functions.

mod gram;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{with_workers, FeatureRow};
use crate::dynamics::DensityOperator;
use crate::error::{Error, Result};
use crate::linalg;
use crate::singularity::{QuenchAnalyzer, QuenchMode, QuenchState, Scenario};
use crate::spin_model::{build_hamiltonian, check_dim, ground_state, manifold_states, FieldVector, PureState};

pub use gram::{
    build_gram, gram_row, psd_check, DenseKernel, GramMatrix, GramMeta, KernelMatrix, SubMatrix, PSD_ABORT,
    PSD_EXACT_LIMIT,
};

/// Overlaps may leave `[0, 1]` by this much before it is treated as a fault.
pub const OVERLAP_EXCURSION_TOL: f64 = 1e-10;
/// `1 − I` below this is rounding noise of the overlap and is taken as 0;
/// otherwise `√(1 − I)` inflates ulp-level noise to ~1e-8 and clusters of
/// identical states (e.g. every θ at φ = 0) break PSD-ness of `qrbf`.
pub const UNIT_GAP_SNAP: f64 = 64.0 * f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelMethod {
    Gsk,
    Dsk,
    /// `exp(-γ_c ‖x − x'‖²)` on min-max scaled features.
    ClassicalRbf {
        gamma: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelMap {
    /// `K = I`.
    Qlin,
    /// `K = exp(-γ √(1 − I))`.
    Qrbf { gamma: f64 },
}

/// Width used when a classical baseline is requested without one; features
/// are min-max scaled, so this spans a few grid cells.
pub const DEFAULT_CLASSICAL_GAMMA: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub method: KernelMethod,
    pub map: KernelMap,
}

impl KernelSpec {
    /// GSK with `qrbf(γ = 1)`.
    pub fn gsk_default() -> Self {
        Self { method: KernelMethod::Gsk, map: KernelMap::Qrbf { gamma: 1.0 } }
    }

    /// DSK with `qlin`.
    pub fn dsk_default() -> Self {
        Self { method: KernelMethod::Dsk, map: KernelMap::Qlin }
    }

    pub fn classical(gamma: f64) -> Self {
        Self { method: KernelMethod::ClassicalRbf { gamma }, map: KernelMap::Qlin }
    }

    pub fn with_map(mut self, map: KernelMap) -> Self {
        self.map = map;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let KernelMap::Qrbf { gamma } = self.map {
            if !(gamma > 0.0 && gamma.is_finite()) {
                return Err(Error::InvalidConfig(format!("qrbf gamma must be > 0, got {gamma}")));
            }
        }
        if let KernelMethod::ClassicalRbf { gamma } = self.method {
            if !(gamma >= 0.0 && gamma.is_finite()) {
                return Err(Error::InvalidConfig(format!("classical gamma must be >= 0, got {gamma}")));
            }
            if self.map != KernelMap::Qlin {
                return Err(Error::InvalidConfig("classical kernel takes no quantum map".into()));
            }
        }
        Ok(())
    }
}

/// Per-feature object the kernel compares.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelState {
    Pure(PureState),
    Mixed(DensityOperator),
    Classical(Vec<f64>),
}

impl From<QuenchState> for KernelState {
    fn from(s: QuenchState) -> Self {
        match s {
            QuenchState::Pure(p) => KernelState::Pure(p),
            QuenchState::Mixed(r) => KernelState::Mixed(r),
        }
    }
}

fn checked_unit(value: f64) -> Result<f64> {
    if !(-OVERLAP_EXCURSION_TOL..=1.0 + OVERLAP_EXCURSION_TOL).contains(&value) {
        return Err(Error::InvalidOverlap(value));
    }
    Ok(value.clamp(0.0, 1.0))
}

/// `|⟨a|b⟩|²`.
pub fn pure_overlap(a: &PureState, b: &PureState) -> Result<f64> {
    checked_unit(a.inner(b)?.norm_sqr())
}

/// `Tr(ρ_a ρ_b)`.
pub fn mixed_overlap(a: &DensityOperator, b: &DensityOperator) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    checked_unit(linalg::trace_product(a.matrix(), b.matrix()).re)
}

/// `exp(-γ ‖a − b‖²)`.
pub fn classical_rbf(a: &[f64], b: &[f64], gamma: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { expected: a.len(), found: b.len() });
    }
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((-gamma * d2).exp())
}

/// Overlap `I^Q` between two kernel states (classical states use `‖·‖²`
/// through [`kernel_value`] instead).
pub fn overlap(a: &KernelState, b: &KernelState) -> Result<f64> {
    match (a, b) {
        (KernelState::Pure(x), KernelState::Pure(y)) => pure_overlap(x, y),
        (KernelState::Mixed(x), KernelState::Mixed(y)) => mixed_overlap(x, y),
        (KernelState::Pure(p), KernelState::Mixed(r)) | (KernelState::Mixed(r), KernelState::Pure(p)) => {
            check_dim(r.dim(), p.dim())?;
            checked_unit(linalg::expectation(r.matrix(), p.amplitudes()).re)
        }
        _ => Err(Error::InvalidConfig("cannot take a quantum overlap of classical features".into())),
    }
}

pub fn kernel_map(overlap: f64, map: KernelMap) -> Result<f64> {
    let i = checked_unit(overlap)?;
    Ok(match map {
        KernelMap::Qlin => i,
        KernelMap::Qrbf { gamma } => {
            let gap = 1.0 - i;
            if gap < UNIT_GAP_SNAP {
                1.0
            } else {
                (-gamma * gap.sqrt()).exp()
            }
        }
    })
}

/// Full kernel entry for `spec`.
pub fn kernel_value(a: &KernelState, b: &KernelState, spec: &KernelSpec) -> Result<f64> {
    match (spec.method, a, b) {
        (KernelMethod::ClassicalRbf { gamma }, KernelState::Classical(x), KernelState::Classical(y)) => {
            classical_rbf(x, y, gamma)
        }
        (KernelMethod::ClassicalRbf { .. }, _, _) => {
            Err(Error::InvalidConfig("classical kernel needs classical features".into()))
        }
        _ => kernel_map(overlap(a, b)?, spec.map),
    }
}

/// Ground state of `H_s(h)` used by GSK.
#[derive(Debug, Clone, PartialEq)]
pub struct GskState {
    pub state: KernelState,
    /// Ground level was degenerate within tolerance; the tie-break chose the
    /// member closest to `|G₋⟩`.
    pub degenerate: bool,
    pub gap: f64,
}

/// GSK feature map. The drive never enters (only the static Hamiltonian is
/// used); open dynamics use the ground-state projector.
pub fn gsk_state(scenario: &Scenario, field: &FieldVector) -> Result<GskState> {
    let manifold = manifold_states(&scenario.system)?;
    let ground = ground_state(&build_hamiltonian(&scenario.system, field)?, &manifold.minus)?;
    let state = match scenario.mode {
        QuenchMode::Open(_) => KernelState::Mixed(DensityOperator::from_pure(&ground.state)),
        _ => KernelState::Pure(ground.state),
    };
    Ok(GskState { state, degenerate: ground.degenerate, gap: ground.gap })
}

/// DSK feature map: the evolved state at the critical time.
pub fn dsk_state(scenario: &Scenario, field: &FieldVector) -> Result<KernelState> {
    Ok(QuenchAnalyzer::new(*scenario)?.analyze(field)?.state_at_critical.into())
}

/// Per-row kernel states, computed once each and in parallel.
#[derive(Debug, Clone)]
pub struct StateSet {
    pub states: Vec<KernelState>,
    /// Rows whose GSK ground level was degenerate.
    pub degenerate_rows: Vec<usize>,
}

/// Features scaled to `[0, 1]` per coordinate (min-max over `rows`).
pub fn classical_features(rows: &[FeatureRow]) -> Vec<Vec<f64>> {
    let columns = |r: &FeatureRow| [r.theta, r.phi, r.h];
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for r in rows {
        for (c, v) in columns(r).into_iter().enumerate() {
            lo[c] = lo[c].min(v);
            hi[c] = hi[c].max(v);
        }
    }
    rows.iter()
        .map(|r| {
            columns(r)
                .into_iter()
                .enumerate()
                .map(|(c, v)| if hi[c] > lo[c] { (v - lo[c]) / (hi[c] - lo[c]) } else { 0.0 })
                .collect()
        })
        .collect()
}

pub fn compute_states(rows: &[FeatureRow], scenario: &Scenario, spec: &KernelSpec, workers: usize) -> Result<StateSet> {
    spec.validate()?;
    match spec.method {
        KernelMethod::ClassicalRbf { .. } => Ok(StateSet {
            states: classical_features(rows).into_iter().map(KernelState::Classical).collect(),
            degenerate_rows: Vec::new(),
        }),
        KernelMethod::Gsk => {
            let results: Vec<Result<GskState>> =
                with_workers(workers, || rows.par_iter().map(|r| gsk_state(scenario, &r.field()?)).collect())?;
            let mut states = Vec::with_capacity(rows.len());
            let mut degenerate_rows = Vec::new();
            for (i, result) in results.into_iter().enumerate() {
                let gsk = result?;
                if gsk.degenerate {
                    degenerate_rows.push(i);
                }
                states.push(gsk.state);
            }
            Ok(StateSet { states, degenerate_rows })
        }
        KernelMethod::Dsk => {
            let analyzer = QuenchAnalyzer::new(*scenario)?;
            let states: Vec<Result<KernelState>> = with_workers(workers, || {
                rows.par_iter().map(|r| Ok(analyzer.analyze(&r.field()?)?.state_at_critical.into())).collect()
            })?;
            Ok(StateSet { states: states.into_iter().collect::<Result<_>>()?, degenerate_rows: Vec::new() })
        }
    }
}
