use proptest::prelude::*;

use edgepart::data::{make_cv_folds, SparseBinaryMatrix};
use edgepart::distributions::RngHandle;
use edgepart::eval::{pr_auc, tdll_with_mode, PredictiveEnsemble, TdllMode};
use edgepart::idepm::{log_marginal_infinite, CollapsedState, IdepmHypers};
use edgepart::truncated::{
    cepm_grid_points, FactorPrior, Hyperparameters, TruncatedState, TruncatedVariant,
};

fn matrix() -> impl Strategy<Value = SparseBinaryMatrix> {
    (1usize..=5, 1usize..=5)
        .prop_flat_map(|(i, j)| {
            (
                Just(i),
                Just(j),
                proptest::collection::vec(any::<bool>(), i * j),
            )
        })
        .prop_map(|(i, j, cells)| {
            let ones = cells
                .iter()
                .enumerate()
                .filter(|(_, &on)| on)
                .map(|(c, _)| (c / j, c % j));
            SparseBinaryMatrix::new(i, j, ones).unwrap()
        })
}

fn variant() -> impl Strategy<Value = TruncatedVariant> {
    prop_oneof![
        Just(TruncatedVariant::Epm),
        Just(TruncatedVariant::Cepm),
        Just(TruncatedVariant::Depm),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn truncated_sweeps_keep_counts_on_ones(x in matrix(), v in variant(), t in 1usize..5, seed in any::<u64>()) {
        let hypers = Hyperparameters::for_variant(v, x.n_rows(), x.n_cols());
        let mut s = TruncatedState::init(&x, t, hypers, RngHandle::new(seed)).unwrap();
        let grid = cepm_grid_points();
        for _ in 0..4 {
            s.gibbs_sweep(&x).unwrap();
            let counts = s.counts();
            counts.audit().unwrap();
            prop_assert_eq!(counts.edges(), x.ones());
            prop_assert!((0..counts.edges().len()).all(|e| counts.edge_total(e) >= 1));
            prop_assert!(s.max_simplex_error() < 1e-9);
            prop_assert!(s.lambda().iter().all(|l| l.is_finite() && *l >= 0.0));
            if let FactorPrior::Constrained { a1, a2, .. } = s.hypers().factors {
                prop_assert!(grid.contains(&a1) && grid.contains(&a2));
            }
            for i in 0..x.n_rows() {
                for j in 0..x.n_cols() {
                    let p = s.link_probability(i, j);
                    prop_assert!((0.0..=1.0).contains(&p));
                }
            }
        }
    }

    #[test]
    fn collapsed_sweeps_keep_atoms_live(x in matrix(), seed in any::<u64>()) {
        let mut s = CollapsedState::init(&x, IdepmHypers::default(), RngHandle::new(seed)).unwrap();
        for _ in 0..4 {
            s.collapsed_sweep(&x).unwrap();
            s.audit().unwrap();
            prop_assert_eq!(s.edges(), x.ones());
            prop_assert!(s.atoms().iter().all(|a| a.total() > 0));
            prop_assert!(s.max_simplex_error() < 1e-9);
            let counts = s.to_counts();
            prop_assert_eq!(counts.total(), s.total_customers());
            let direct = s.log_marginal_likelihood();
            let from_counts = log_marginal_infinite(&counts, s.hypers()).unwrap();
            prop_assert!((direct - from_counts).abs() <= 1e-9 * direct.abs().max(1.0));
        }
        let before = s.log_marginal_likelihood();
        let order: Vec<usize> = (0..s.n_active()).rev().collect();
        s.permute_atoms(&order).unwrap();
        prop_assert!((s.log_marginal_likelihood() - before).abs() <= 1e-9 * before.abs().max(1.0));
    }

    #[test]
    fn folds_partition_every_cell(x in matrix(), folds in 2usize..5, seed in any::<u64>()) {
        prop_assume!(x.n_cells() >= folds);
        let splits = make_cv_folds(&x, folds, &mut RngHandle::new(seed)).unwrap();
        let mut cells: Vec<(usize, usize)> = splits.iter().flat_map(|s| s.test_cells()).collect();
        cells.sort_unstable();
        let all: Vec<(usize, usize)> = (0..x.n_rows()).flat_map(|i| (0..x.n_cols()).map(move |j| (i, j))).collect();
        prop_assert_eq!(cells, all);
        for s in &splits {
            let expected: Vec<(usize, usize)> = x
                .ones()
                .iter()
                .copied()
                .filter(|c| !s.test_cells().contains(c))
                .collect();
            prop_assert_eq!(s.train_view.ones(), &expected[..]);
        }
    }

    #[test]
    fn metrics_ignore_order_and_monotone_maps(
        rows in proptest::collection::vec((0.001f64..0.999, any::<bool>()), 2..30),
        shift in 0usize..30,
    ) {
        prop_assume!(rows.iter().any(|r| r.1));
        let (scores, labels): (Vec<f64>, Vec<bool>) = rows.iter().copied().unzip();
        let auc = pr_auc(&scores, &labels).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp()).collect();
        prop_assert!((pr_auc(&mapped, &labels).unwrap() - auc).abs() < 1e-12);

        let cells: Vec<(usize, usize)> = (0..rows.len()).map(|c| (c, 0)).collect();
        let mut ens = PredictiveEnsemble::new(cells.clone());
        ens.push_probabilities(scores.clone()).unwrap();
        let tdll = tdll_with_mode(&ens, &labels, TdllMode::MeanProbability).unwrap();
        let k = shift % rows.len();
        let mut rotated_scores = scores.clone();
        let mut rotated_labels = labels.clone();
        rotated_scores.rotate_left(k);
        rotated_labels.rotate_left(k);
        let mut ens = PredictiveEnsemble::new(cells);
        ens.push_probabilities(rotated_scores).unwrap();
        let rotated = tdll_with_mode(&ens, &rotated_labels, TdllMode::MeanProbability).unwrap();
        prop_assert!((rotated - tdll).abs() < 1e-12);
    }
}
