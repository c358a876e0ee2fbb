//! Stratified k-fold grid search over `C` (and the `qrbf` width).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{predict, train, TrainConfig};
use crate::error::{Error, Result};
use crate::kernels::{kernel_map, DenseKernel, KernelMap, KernelMatrix, SubMatrix};
use crate::singularity::Label;

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_C_GRID: [f64; 4] = [0.1, 1.0, 10.0, 100.0];
pub const DEFAULT_GAMMA_GRID: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub c: f64,
    pub map: KernelMap,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub config: TrainConfig,
    pub map: KernelMap,
    pub mean_accuracy: f64,
    pub cells: Vec<CvCell>,
}

/// Fold id for every sample; each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[Label], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {folds}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    for class in [Label::Positive, Label::Negative] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < folds {
            return Err(Error::InsufficientData(format!(
                "class {class} has {} samples, fewer than {folds} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for (k, i) in members.into_iter().enumerate() {
            assignment[i] = k % folds;
        }
    }
    Ok(assignment)
}

fn fold_accuracy(
    gram: &impl KernelMatrix,
    labels: &[Label],
    assignment: &[usize],
    folds: usize,
    config: &TrainConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for fold in 0..folds {
        let train_idx: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] != fold).collect();
        let val_idx: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] == fold).collect();
        let train_labels: Vec<Label> = train_idx.iter().map(|&i| labels[i]).collect();
        let model = train(&SubMatrix::new(gram, &train_idx), &train_labels, config)?;
        let mut correct = 0usize;
        let mut row = vec![0.0; train_idx.len()];
        for &v in &val_idx {
            for (r, &t) in row.iter_mut().zip(&train_idx) {
                *r = gram.get(v, t);
            }
            if predict(&model, &row)? == labels[v] {
                correct += 1;
            }
        }
        total += correct as f64 / val_idx.len() as f64;
    }
    Ok(total / folds as f64)
}

fn gamma_of(map: &KernelMap) -> f64 {
    match map {
        KernelMap::Qlin => 0.0,
        KernelMap::Qrbf { gamma } => *gamma,
    }
}

/// Best cell: highest accuracy, ties to smaller `C`, then smaller `γ`.
fn select(cells: &[CvCell], template: &TrainConfig) -> Result<CvResult> {
    let best = cells
        .iter()
        .copied()
        .reduce(|best, cell| {
            let better = cell.mean_accuracy > best.mean_accuracy
                || (cell.mean_accuracy == best.mean_accuracy
                    && (cell.c < best.c || (cell.c == best.c && gamma_of(&cell.map) < gamma_of(&best.map))));
            if better {
                cell
            } else {
                best
            }
        })
        .ok_or(Error::EmptyInput("hyperparameter grid"))?;
    Ok(CvResult {
        config: TrainConfig { c: best.c, ..*template },
        map: best.map,
        mean_accuracy: best.mean_accuracy,
        cells: cells.to_vec(),
    })
}

/// Grid search over `C` on a fixed kernel matrix; `map` is recorded as given.
pub fn cross_validate(
    gram: &impl KernelMatrix,
    labels: &[Label],
    folds: usize,
    c_grid: &[f64],
    map: KernelMap,
    template: &TrainConfig,
) -> Result<CvResult> {
    if gram.size() != labels.len() {
        return Err(Error::LengthMismatch { expected: gram.size(), found: labels.len() });
    }
    let assignment = stratified_folds(labels, folds, template.seed)?;
    let mut cells = Vec::with_capacity(c_grid.len());
    for &c in c_grid {
        let config = TrainConfig { c, ..*template };
        cells.push(CvCell { c, map, mean_accuracy: fold_accuracy(gram, labels, &assignment, folds, &config)? });
    }
    select(&cells, template)
}

/// Grid search over `C` × kernel maps, starting from raw overlaps `I^Q`.
pub fn cross_validate_overlaps(
    overlaps: &impl KernelMatrix,
    labels: &[Label],
    folds: usize,
    c_grid: &[f64],
    maps: &[KernelMap],
    template: &TrainConfig,
) -> Result<CvResult> {
    if overlaps.size() != labels.len() {
        return Err(Error::LengthMismatch { expected: overlaps.size(), found: labels.len() });
    }
    let assignment = stratified_folds(labels, folds, template.seed)?;
    let mut cells = Vec::with_capacity(c_grid.len() * maps.len());
    for &map in maps {
        let n = overlaps.size();
        let mut entries = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                entries.push(kernel_map(overlaps.get(i, j), map)?);
            }
        }
        let mapped = DenseKernel::new(n, entries)?;
        for &c in c_grid {
            let config = TrainConfig { c, ..*template };
            cells.push(CvCell { c, map, mean_accuracy: fold_accuracy(&mapped, labels, &assignment, folds, &config)? });
        }
    }
    select(&cells, template)
}
