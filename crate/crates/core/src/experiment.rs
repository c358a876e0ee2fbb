//! End-to-end runs: label a grid, split, fit a kernel SVM on the training
//! part and score the held-out rows.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{assemble, split_indices, sweep, with_workers, FeatureRow, LabeledDataset};
use crate::error::{Error, Result};
use crate::kernels::{
    build_gram, compute_states, gram_row, kernel_map, psd_check, DenseKernel, KernelMap, KernelMatrix, KernelMethod,
    KernelSpec, KernelState, PSD_ABORT,
};
use crate::singularity::{Label, Scenario};
use crate::svm::{
    cross_validate, cross_validate_overlaps, predict, train, Confusion, TrainConfig, DEFAULT_C_GRID, DEFAULT_FOLDS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentOptions {
    pub train_fraction: f64,
    pub split_seed: u64,
    pub folds: usize,
    pub c_grid: Vec<f64>,
    /// `qrbf` widths searched next to `qlin`; empty keeps the configured map.
    pub gamma_grid: Vec<f64>,
    pub kkt_tol: Option<f64>,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            split_seed: 0,
            folds: DEFAULT_FOLDS,
            c_grid: DEFAULT_C_GRID.to_vec(),
            gamma_grid: Vec::new(),
            kkt_tol: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    /// Spec after model selection (the chosen map).
    pub spec: KernelSpec,
    pub c: f64,
    pub cv_accuracy: f64,
    pub test_accuracy: f64,
    pub confusion: Confusion,
    pub n_train: usize,
    pub n_test: usize,
    pub n_support: usize,
    pub converged: bool,
    /// Smallest eigenvalue of the training Gram.
    pub min_eigenvalue: f64,
    pub degenerate_rows: usize,
    pub runtime_secs: f64,
}

/// Labels and DSK states from one sweep; failed rows stay unlabeled and carry
/// no state.
pub fn label_with_states(
    rows: &[FeatureRow],
    scenario: &Scenario,
    workers: usize,
) -> Result<(LabeledDataset, Vec<Option<KernelState>>)> {
    let results = sweep(rows, scenario, workers, |_, outcome| {
        (outcome.report.label, KernelState::from(outcome.state_at_critical))
    })?;
    let mut labels = Vec::with_capacity(results.len());
    let mut states = Vec::with_capacity(results.len());
    for result in results {
        match result {
            Ok((label, state)) => {
                labels.push(Ok(label));
                states.push(Some(state));
            }
            Err(e) => {
                labels.push(Err(e));
                states.push(None);
            }
        }
    }
    Ok((assemble(rows, scenario, labels), states))
}

/// Data for one run: labelled dataset plus cached DSK states.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scenario: Scenario,
    pub dataset: LabeledDataset,
    dsk: Vec<Option<KernelState>>,
}

impl Prepared {
    pub fn generate(rows: &[FeatureRow], scenario: &Scenario, workers: usize) -> Result<Self> {
        let (dataset, dsk) = label_with_states(rows, scenario, workers)?;
        Ok(Self { scenario: *scenario, dataset, dsk })
    }

    /// States for the labelled rows, in `labeled_indices` order.
    fn states(&self, spec: &KernelSpec, workers: usize) -> Result<(Vec<KernelState>, usize)> {
        let labeled = self.dataset.labeled_indices();
        match spec.method {
            KernelMethod::Dsk => {
                let states = labeled
                    .iter()
                    .map(|&i| {
                        self.dsk[i].clone().ok_or_else(|| Error::InsufficientData(format!("row {i} has no state")))
                    })
                    .collect::<Result<_>>()?;
                Ok((states, 0))
            }
            _ => {
                let rows: Vec<FeatureRow> = labeled.iter().map(|&i| self.dataset.rows[i]).collect();
                let set = compute_states(&rows, &self.scenario, spec, workers)?;
                Ok((set.states, set.degenerate_rows.len()))
            }
        }
    }

    pub fn evaluate(&self, spec: &KernelSpec, options: &ExperimentOptions, workers: usize) -> Result<KernelReport> {
        let (states, degenerate) = self.states(spec, workers)?;
        let labels: Vec<Label> =
            self.dataset.labeled_indices().iter().filter_map(|&i| self.dataset.rows[i].label).collect();
        evaluate_states(&states, &labels, spec, options, workers).map(|mut r| {
            r.degenerate_rows = degenerate;
            r
        })
    }
}

fn mapped(overlaps: &impl KernelMatrix, map: KernelMap) -> DenseKernel {
    DenseKernel::from_fn(overlaps, |i| kernel_map(i, map).unwrap_or(f64::NAN))
}

/// Split → train-only Gram → CV → fit → test, on precomputed states.
pub fn evaluate_states(
    states: &[KernelState],
    labels: &[Label],
    spec: &KernelSpec,
    options: &ExperimentOptions,
    workers: usize,
) -> Result<KernelReport> {
    let start = Instant::now();
    if states.len() != labels.len() {
        return Err(Error::LengthMismatch { expected: states.len(), found: labels.len() });
    }
    let (train_idx, test_idx) = split_indices(states.len(), options.train_fraction, options.split_seed)?;
    let train_states: Vec<KernelState> = train_idx.iter().map(|&i| states[i].clone()).collect();
    let train_labels: Vec<Label> = train_idx.iter().map(|&i| labels[i]).collect();
    let mut template = TrainConfig::new(1.0);
    template.seed = options.split_seed;
    if let Some(tol) = options.kkt_tol {
        template.kkt_tol = tol;
    }

    let search_maps = !options.gamma_grid.is_empty() && !matches!(spec.method, KernelMethod::ClassicalRbf { .. });
    let (cv, model, min_eigenvalue) = if search_maps {
        let overlaps = build_gram(&train_states, &spec.with_map(KernelMap::Qlin), "", workers)?;
        let maps: Vec<KernelMap> = std::iter::once(KernelMap::Qlin)
            .chain(options.gamma_grid.iter().map(|&gamma| KernelMap::Qrbf { gamma }))
            .collect();
        let cv = cross_validate_overlaps(&overlaps, &train_labels, options.folds, &options.c_grid, &maps, &template)?;
        let gram = mapped(&overlaps, cv.map);
        drop(overlaps);
        let min_eigenvalue = psd_check(gram.size(), gram.entries())?;
        if min_eigenvalue < PSD_ABORT {
            return Err(Error::PsdViolation { min_eigenvalue });
        }
        let model = train(&gram, &train_labels, &cv.config)?;
        (cv, model, min_eigenvalue)
    } else {
        let gram = build_gram(&train_states, spec, "", workers)?;
        let cv = cross_validate(&gram, &train_labels, options.folds, &options.c_grid, spec.map, &template)?;
        let model = train(&gram, &train_labels, &cv.config)?;
        (cv, model, gram.meta().min_eigenvalue)
    };
    let chosen = if search_maps { spec.with_map(cv.map) } else { *spec };

    let predictions: Vec<Result<Label>> = with_workers(workers, || {
        test_idx.par_iter().map(|&i| predict(&model, &gram_row(&states[i], &train_states, &chosen)?)).collect()
    })?;
    let mut confusion = Confusion::default();
    for (&i, p) in test_idx.iter().zip(predictions) {
        confusion.record(p?, labels[i]);
    }
    Ok(KernelReport {
        spec: chosen,
        c: cv.config.c,
        cv_accuracy: cv.mean_accuracy,
        test_accuracy: confusion.accuracy(),
        confusion,
        n_train: train_idx.len(),
        n_test: test_idx.len(),
        n_support: model.support.len(),
        converged: model.converged,
        min_eigenvalue,
        degenerate_rows: 0,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::angle_grid;
    use crate::spin_model::SystemConfig;

    #[test]
    fn small_closed_pipeline_runs() {
        let scenario = Scenario::closed(SystemConfig::new(2, 0.5).unwrap());
        let rows = angle_grid(12, 12, 0.6).unwrap();
        let prepared = Prepared::generate(&rows, &scenario, 1).unwrap();
        let (pos, neg) = prepared.dataset.class_counts();
        assert!(pos > 0 && neg > 0);
        let options = ExperimentOptions { c_grid: vec![1.0, 10.0], folds: 3, ..Default::default() };
        for spec in [KernelSpec::dsk_default(), KernelSpec::gsk_default(), KernelSpec::classical(1.0)] {
            let report = prepared.evaluate(&spec, &options, 1).unwrap();
            assert_eq!(report.n_train + report.n_test, 144);
            assert_eq!(report.confusion.total(), report.n_test);
            assert!(report.test_accuracy > 0.6, "{spec:?}: {}", report.test_accuracy);
        }
    }

    #[test]
    fn map_search_picks_a_listed_map() {
        let scenario = Scenario::closed(SystemConfig::new(2, 0.5).unwrap());
        let rows = angle_grid(10, 10, 0.6).unwrap();
        let prepared = Prepared::generate(&rows, &scenario, 1).unwrap();
        let options =
            ExperimentOptions { c_grid: vec![10.0], folds: 3, gamma_grid: vec![0.5, 1.0], ..Default::default() };
        let report = prepared.evaluate(&KernelSpec::gsk_default(), &options, 1).unwrap();
        assert!(matches!(
            report.spec.map,
            KernelMap::Qlin | KernelMap::Qrbf { gamma: 0.5 } | KernelMap::Qrbf { gamma: 1.0 }
        ));
    }
}
