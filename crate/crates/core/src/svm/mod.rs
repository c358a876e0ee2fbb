//! Soft-margin kernel SVM trained on the dual problem
//!
//! ```text
//! max_c  Σ c_m − ½ Σ_{m,m'} c_m y_m K_{mm'} y_{m'} c_{m'}
//! s.t.   0 ≤ c_m ≤ C,  Σ c_m y_m = 0
//! ```
//!
//! with decision function `f(x) = Σ c_m y_m K(x_m, x) − b`.

mod cv;
mod oracle;
mod smo;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelMatrix, KernelSpec};
use crate::singularity::Label;

pub use cv::{
    cross_validate, cross_validate_overlaps, stratified_folds, CvCell, CvResult, DEFAULT_C_GRID, DEFAULT_FOLDS,
    DEFAULT_GAMMA_GRID,
};
pub use oracle::qp_oracle_small;
pub use smo::train;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Box bound on the dual coefficients.
    pub c: f64,
    /// Stop once the maximal KKT violation falls below this.
    #[serde(default = "default_kkt_tol")]
    pub kkt_tol: f64,
    /// Iteration cap; hitting it returns the iterate flagged unconverged.
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_kkt_tol() -> f64 {
    1e-3
}

fn default_max_iter() -> usize {
    10_000_000
}

impl TrainConfig {
    pub fn new(c: f64) -> Self {
        Self { c, kkt_tol: default_kkt_tol(), max_iter: default_max_iter(), seed: 0 }
    }

    pub fn with_kkt_tol(mut self, kkt_tol: f64) -> Self {
        self.kkt_tol = kkt_tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidConfig(format!("C must be > 0, got {}", self.c)));
        }
        if !(self.kkt_tol > 0.0) {
            return Err(Error::InvalidConfig(format!("kkt_tol must be > 0, got {}", self.kkt_tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    /// Number of training points the kernel rows must cover.
    pub n_train: usize,
    /// Indices (into the training set) of points with nonzero coefficients.
    pub support: Vec<usize>,
    /// Dual coefficients `c_m` of the support points.
    pub coefficients: Vec<f64>,
    /// Labels `y_m` of the support points.
    pub support_labels: Vec<Label>,
    pub bias: f64,
    pub config: TrainConfig,
    /// Dual objective at the returned iterate.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default)]
    pub spec: Option<KernelSpec>,
    #[serde(default)]
    pub dataset_fingerprint: Option<String>,
    #[serde(default)]
    pub gram_fingerprint: Option<String>,
}

impl SvmModel {
    /// Builds a model from a full dual vector.
    pub(crate) fn from_dual(
        alpha: &[f64],
        labels: &[f64],
        bias: f64,
        config: TrainConfig,
        objective: f64,
        iterations: usize,
        converged: bool,
    ) -> Self {
        let support: Vec<usize> = (0..alpha.len()).filter(|&i| alpha[i] > 0.0).collect();
        Self {
            n_train: alpha.len(),
            coefficients: support.iter().map(|&i| alpha[i]).collect(),
            support_labels: support.iter().map(|&i| Label::from_sign(labels[i])).collect(),
            support,
            bias,
            config,
            objective,
            iterations,
            converged,
            spec: None,
            dataset_fingerprint: None,
            gram_fingerprint: None,
        }
    }

    /// Full dual vector of length `n_train`.
    pub fn dual(&self) -> Vec<f64> {
        let mut alpha = vec![0.0; self.n_train];
        for (&i, &c) in self.support.iter().zip(&self.coefficients) {
            alpha[i] = c;
        }
        alpha
    }

    /// `Σ c_m y_m`, zero for a feasible model.
    pub fn equality_residual(&self) -> f64 {
        self.coefficients.iter().zip(&self.support_labels).map(|(c, y)| c * y.as_f64()).sum()
    }
}

/// Dual objective `Σ c − ½ cᵀ Q c` for an arbitrary coefficient vector.
pub fn dual_objective(gram: &impl KernelMatrix, labels: &[f64], alpha: &[f64]) -> f64 {
    let n = alpha.len();
    let mut quad = 0.0;
    for i in (0..n).filter(|&i| alpha[i] != 0.0) {
        let mut row = 0.0;
        for j in (0..n).filter(|&j| alpha[j] != 0.0) {
            row += alpha[j] * labels[j] * gram.get(i, j);
        }
        quad += alpha[i] * labels[i] * row;
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

pub(crate) fn check_training_input(gram: &impl KernelMatrix, labels: &[Label]) -> Result<Vec<f64>> {
    if gram.size() != labels.len() {
        return Err(Error::LengthMismatch { expected: gram.size(), found: labels.len() });
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    let first = labels[0];
    if labels.iter().all(|&l| l == first) {
        return Err(Error::SingleClassDataset);
    }
    Ok(labels.iter().map(|l| l.as_f64()).collect())
}

/// `Σ c_m y_m K(x_m, x) − b` for a kernel row against all training points.
pub fn decision(model: &SvmModel, kernel_row: &[f64]) -> Result<f64> {
    if kernel_row.len() != model.n_train {
        return Err(Error::LengthMismatch { expected: model.n_train, found: kernel_row.len() });
    }
    let sum: f64 = model
        .support
        .iter()
        .zip(&model.coefficients)
        .zip(&model.support_labels)
        .map(|((&i, &c), y)| c * y.as_f64() * kernel_row[i])
        .sum();
    Ok(sum - model.bias)
}

/// Sign of the decision value; an exact zero is `+1`.
pub fn predict(model: &SvmModel, kernel_row: &[f64]) -> Result<Label> {
    Ok(Label::from_sign(decision(model, kernel_row)?))
}

/// Fraction of rows whose prediction matches its label.
pub fn accuracy<R: AsRef<[f64]>>(model: &SvmModel, rows: &[R], labels: &[Label]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("test set"));
    }
    if rows.len() != labels.len() {
        return Err(Error::LengthMismatch { expected: rows.len(), found: labels.len() });
    }
    let mut correct = 0usize;
    for (row, &label) in rows.iter().zip(labels) {
        if predict(model, row.as_ref())? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / rows.len() as f64)
}

/// Counts `[[tp, fn], [fp, tn]]` with `+1` as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positive: usize,
    pub false_negative: usize,
    pub false_positive: usize,
    pub true_negative: usize,
}

impl Confusion {
    pub fn record(&mut self, predicted: Label, actual: Label) {
        match (actual, predicted) {
            (Label::Positive, Label::Positive) => self.true_positive += 1,
            (Label::Positive, Label::Negative) => self.false_negative += 1,
            (Label::Negative, Label::Positive) => self.false_positive += 1,
            (Label::Negative, Label::Negative) => self.true_negative += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.true_positive + self.false_negative + self.false_positive + self.true_negative
    }

    pub fn accuracy(&self) -> f64 {
        (self.true_positive + self.true_negative) as f64 / self.total().max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::DenseKernel;

    fn identity2() -> DenseKernel {
        DenseKernel::new(2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()
    }

    #[test]
    fn two_point_problem_by_hand() {
        // max c1 + c2 − ½(c1² + c2²) with c1 = c2 → c = 1, b = 0.
        let labels = [Label::Positive, Label::Negative];
        let model = train(&identity2(), &labels, &TrainConfig::new(10.0).with_kkt_tol(1e-12)).unwrap();
        assert_eq!(model.support, vec![0, 1]);
        assert!((model.coefficients[0] - 1.0).abs() < 1e-12);
        assert!(model.bias.abs() < 1e-12);
        assert!(decision(&model, &[0.5, 0.5]).unwrap().abs() < 1e-12);
        assert!((decision(&model, &[1.0, 0.0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prediction_sign_rule() {
        let mut model = SvmModel::from_dual(&[0.0, 0.0], &[1.0, -1.0], 0.0, TrainConfig::new(1.0), 0.0, 0, true);
        assert_eq!(decision(&model, &[0.3, 0.9]).unwrap(), 0.0);
        assert_eq!(predict(&model, &[0.3, 0.9]).unwrap(), Label::Positive);
        model.bias = -0.7;
        assert_eq!(predict(&model, &[0.0, 0.0]).unwrap(), Label::Positive);
        model.bias = 0.2;
        assert_eq!(decision(&model, &[5.0, 1.0]).unwrap(), -0.2);
        assert_eq!(predict(&model, &[5.0, 1.0]).unwrap(), Label::Negative);
        assert!(decision(&model, &[1.0]).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let labels = [Label::Positive, Label::Negative];
        let model = train(&identity2(), &labels, &TrainConfig::new(10.0)).unwrap();
        let rows = [vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(accuracy(&model, &rows, &labels).unwrap(), 1.0);
        let flipped = [Label::Negative, Label::Positive];
        assert_eq!(accuracy(&model, &rows, &flipped).unwrap(), 0.0);
        assert!(accuracy(&model, &Vec::<Vec<f64>>::new(), &[]).is_err());
    }

    #[test]
    fn single_class_rejected() {
        let labels = [Label::Positive, Label::Positive];
        assert!(matches!(train(&identity2(), &labels, &TrainConfig::new(1.0)), Err(Error::SingleClassDataset)));
        assert!(matches!(qp_oracle_small(&identity2(), &labels, 1.0), Err(Error::SingleClassDataset)));
    }

    #[test]
    fn model_json_round_trip() {
        let labels = [Label::Positive, Label::Negative];
        let mut model = train(&identity2(), &labels, &TrainConfig::new(10.0)).unwrap();
        model.spec = Some(KernelSpec::dsk_default());
        model.dataset_fingerprint = Some("abc".into());
        let json = serde_json::to_string(&model).unwrap();
        let back: SvmModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn confusion_counts() {
        let mut c = Confusion::default();
        c.record(Label::Positive, Label::Positive);
        c.record(Label::Negative, Label::Positive);
        c.record(Label::Negative, Label::Negative);
        assert_eq!((c.true_positive, c.false_negative, c.true_negative), (1, 1, 1));
        assert!((c.accuracy() - 2.0 / 3.0).abs() < 1e-15);
    }
}
