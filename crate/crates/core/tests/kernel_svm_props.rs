use std::f64::consts::PI;

use proptest::prelude::*;
use quench_core::dataset::FeatureRow;
use quench_core::kernels::{
    build_gram, compute_states, gram_row, kernel_map, pure_overlap, DenseKernel, KernelMap, KernelMatrix, KernelSpec,
};
use quench_core::singularity::{Label, Scenario};
use quench_core::spin_model::{PureState, SystemConfig};
use quench_core::svm::{accuracy, decision, dual_objective, qp_oracle_small, train, TrainConfig};
use quench_core::verify::random_psd;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rows(max: usize) -> impl Strategy<Value = Vec<FeatureRow>> {
    prop::collection::vec((0.3..1.8f64, 0.0..2.0 * PI, 0.0..PI), 2..max)
        .prop_map(|v| v.into_iter().map(|(h, t, p)| FeatureRow::unlabeled(t, p, h)).collect())
}

fn labels(n: usize, seed: u64) -> Vec<Label> {
    // About a third positive, never single-class; the seed shifts the pattern.
    (0..n)
        .map(|i| if (i as u64 + seed).is_multiple_of(3) || i == 0 { Label::Positive } else { Label::Negative })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gsk_gram_is_a_kernel(rows in rows(14), gamma in 0.25..4.0f64) {
        let scenario = Scenario::closed(SystemConfig::new(2, 0.5).unwrap());
        for spec in [KernelSpec::gsk_default().with_map(KernelMap::Qrbf { gamma }), KernelSpec::gsk_default().with_map(KernelMap::Qlin)] {
            let states = compute_states(&rows, &scenario, &spec, 1).unwrap().states;
            let gram = build_gram(&states, &spec, "", 1).unwrap();
            let n = gram.size();
            for i in 0..n {
                prop_assert_eq!(gram.get(i, i), 1.0);
                for j in 0..n {
                    prop_assert_eq!(gram.get(i, j), gram.get(j, i));
                    prop_assert!((0.0..=1.0).contains(&gram.get(i, j)));
                }
                // A row against the training set reproduces the matrix row.
                let row = gram_row(&states[i], &states, &spec).unwrap();
                prop_assert!((row[i] - 1.0).abs() < 1e-12);
            }
            prop_assert!(gram.meta().min_eigenvalue >= -1e-8);
        }
    }

    #[test]
    fn overlap_ignores_global_phase(re in prop::collection::vec(-1.0..1.0f64, 8), phase in 0.0..2.0 * PI) {
        let amps = |shift: f64| {
            let v: Vec<num_complex::Complex64> = re
                .chunks(2)
                .map(|c| num_complex::Complex64::new(c[0], c[1]) * num_complex::Complex64::from_polar(1.0, shift))
                .collect();
            PureState::normalized(nalgebra::DVector::from_vec(v))
        };
        prop_assume!(re.iter().any(|x| x.abs() > 1e-3));
        let (a, b) = (amps(0.0).unwrap(), amps(phase).unwrap());
        prop_assert!((pure_overlap(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn qrbf_is_monotone_in_overlap(a in 0.0..=1.0f64, b in 0.0..=1.0f64, gamma in 0.1..5.0f64) {
        let map = KernelMap::Qrbf { gamma };
        let (ka, kb) = (kernel_map(a, map).unwrap(), kernel_map(b, map).unwrap());
        prop_assert!((0.0..=1.0).contains(&ka));
        if a < b {
            prop_assert!(ka <= kb);
        }
    }

    #[test]
    fn smo_matches_the_oracle(n in 4usize..=16, seed in any::<u64>(), c in prop::sample::select(vec![0.1, 1.0, 10.0])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gram = random_psd(&mut rng, n);
        let y = labels(n, seed);
        let smo = train(&gram, &y, &TrainConfig::new(c).with_kkt_tol(1e-9)).unwrap();
        let oracle = qp_oracle_small(&gram, &y, c).unwrap();
        let ys: Vec<f64> = y.iter().map(|l| l.as_f64()).collect();
        let (fs, fo) = (dual_objective(&gram, &ys, &smo.dual()), dual_objective(&gram, &ys, &oracle.dual()));
        prop_assert!((fs - fo).abs() <= 1e-6 * fo.abs().max(1.0), "smo {} oracle {}", fs, fo);
        prop_assert!(smo.equality_residual().abs() < 1e-9);
        prop_assert!(smo.dual().iter().all(|&a| (0.0..=c).contains(&a)));
    }

    #[test]
    fn decision_is_linear_in_the_kernel_row(n in 4usize..=12, seed in any::<u64>(), scale in 0.1..3.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gram = random_psd(&mut rng, n);
        let model = train(&gram, &labels(n, seed), &TrainConfig::new(1.0)).unwrap();
        let row: Vec<f64> = (0..n).map(|j| gram.get(0, j)).collect();
        let scaled: Vec<f64> = row.iter().map(|x| x * scale).collect();
        let (d, ds) = (decision(&model, &row).unwrap(), decision(&model, &scaled).unwrap());
        prop_assert!(((ds + model.bias) - scale * (d + model.bias)).abs() < 1e-9 * (1.0 + d.abs() * scale));
    }

    #[test]
    fn flipped_labels_give_complementary_accuracy(n in 4usize..=12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gram = random_psd(&mut rng, n);
        let y = labels(n, seed);
        let model = train(&gram, &y, &TrainConfig::new(1.0)).unwrap();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| gram.get(i, j)).collect()).collect();
        let flipped: Vec<Label> = y.iter().map(|&l| if l == Label::Positive { Label::Negative } else { Label::Positive }).collect();
        let a = accuracy(&model, &rows, &y).unwrap();
        let b = accuracy(&model, &rows, &flipped).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }
}

#[test]
fn dense_kernel_rejects_ragged_entries() {
    assert!(DenseKernel::new(3, vec![1.0; 8]).is_err());
}
