use std::collections::BTreeSet;

use pathloss_core::audit::{AccessKind, LeakageProbe};
use pathloss_core::cv::{
    conventional_evaluate, inner_select, outer_evaluate, run_with_plan, Estimator, FitContext, SelectionMetric,
};
use pathloss_core::data::generate_synthetic;
use pathloss_core::regressors::{FitError, GridPoint, Regressor};
use pathloss_core::{make_fold_plan, Dataset, EstimatorSpec, Family, SyntheticConfig};
use proptest::prelude::*;

fn synthetic(n: usize, noise: f64, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticConfig { n, noise_std: noise, seed, ..Default::default() }).unwrap()
}

/// Mean target of the `k` nearest training rows on feature 5 (distance).
/// Seed-free, and exactly equivariant under power-of-two target scaling.
struct Knn {
    ks: Vec<usize>,
}

struct KnnModel {
    x: Vec<f64>,
    y: Vec<f64>,
    k: usize,
}

impl Regressor for KnnModel {
    fn predict_row(&self, f: &[f64]) -> f64 {
        let mut idx: Vec<usize> = (0..self.x.len()).collect();
        idx.sort_by(|&a, &b| (self.x[a] - f[5]).abs().total_cmp(&(self.x[b] - f[5]).abs()).then(a.cmp(&b)));
        let k = self.k.min(idx.len());
        idx[..k].iter().map(|&i| self.y[i]).sum::<f64>() / k as f64
    }
}

impl Estimator for Knn {
    fn label(&self) -> String {
        "KNN".into()
    }
    fn grid(&self) -> Vec<GridPoint> {
        self.ks.iter().map(|&k| GridPoint::default().with("k", k as f64)).collect()
    }
    fn fit(&self, train: &Dataset, point: &GridPoint, _ctx: &FitContext) -> Result<Box<dyn Regressor>, FitError> {
        Ok(Box::new(KnnModel {
            x: train.column(5).to_vec(),
            y: train.targets().to_vec(),
            k: point.get("k")? as usize,
        }))
    }
}

/// Grid point 0 predicts the training mean; point 1 is the noise-free
/// generator itself.
struct MeanOrTruth;

struct Fixed(Box<dyn Fn(&[f64]) -> f64 + Send + Sync>);

impl Regressor for Fixed {
    fn predict_row(&self, f: &[f64]) -> f64 {
        (self.0)(f)
    }
}

impl Estimator for MeanOrTruth {
    fn label(&self) -> String {
        "MEAN_OR_TRUTH".into()
    }
    fn grid(&self) -> Vec<GridPoint> {
        vec![GridPoint::default().with("truth", 0.0), GridPoint::default().with("truth", 1.0)]
    }
    fn fit(&self, train: &Dataset, point: &GridPoint, _ctx: &FitContext) -> Result<Box<dyn Regressor>, FitError> {
        if point.get("truth")? == 1.0 {
            let cfg = SyntheticConfig::default();
            Ok(Box::new(Fixed(Box::new(move |f| cfg.mean_path_loss(f[5])))))
        } else {
            let m = train.targets().iter().sum::<f64>() / train.n() as f64;
            Ok(Box::new(Fixed(Box::new(move |_| m))))
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fold_plan_partitions_rows(n in 4usize..300, outer in 2usize..8, inner in 2usize..6, seed in any::<u64>()) {
        prop_assume!(n >= outer && n - n.div_ceil(outer) >= inner);
        let plan = make_fold_plan(n, outer, inner, seed).unwrap();
        prop_assert!(plan.check().is_ok());
        let all: Vec<usize> = plan.outer_folds.iter().flatten().copied().collect();
        prop_assert_eq!(all.iter().copied().collect::<BTreeSet<_>>().len(), n);
        prop_assert_eq!(all.len(), n);
        let sizes: Vec<usize> = plan.outer_folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for o in 0..outer {
            let train: BTreeSet<usize> = plan.outer_train(o).into_iter().collect();
            let test: BTreeSet<usize> = plan.outer_folds[o].iter().copied().collect();
            prop_assert!(train.is_disjoint(&test));
            prop_assert_eq!(train.len() + test.len(), n);
            let inner_all: Vec<usize> = plan.inner_folds[o].iter().flatten().copied().collect();
            prop_assert_eq!(inner_all.len(), train.len());
            prop_assert_eq!(inner_all.into_iter().collect::<BTreeSet<_>>(), train.clone());
            let isz: Vec<usize> = plan.inner_folds[o].iter().map(Vec::len).collect();
            prop_assert!(isz.iter().max().unwrap() - isz.iter().min().unwrap() <= 1);
            prop_assert!(isz.iter().all(|&s| s >= 1));
        }
        let again = make_fold_plan(n, outer, inner, seed).unwrap();
        prop_assert_eq!(again.hash(), plan.hash());
        prop_assert_eq!(again, plan);
    }

    #[test]
    fn probe_never_sees_outer_test_rows(n in 12usize..120, outer in 2usize..6, inner in 2usize..4, seed in any::<u64>()) {
        prop_assume!(n - n.div_ceil(outer) >= inner);
        let data = synthetic(n, 1.0, seed);
        let plan = make_fold_plan(n, outer, inner, seed).unwrap();
        let probe = LeakageProbe::new(2);
        outer_evaluate(&probe, &data, &plan, SelectionMetric::Mse, seed).unwrap();
        prop_assert_eq!(probe.violations(&plan), Vec::<String>::new());
        let fits = probe.accesses().iter().filter(|a| a.kind == AccessKind::Fit).count();
        prop_assert_eq!(fits, outer * (2 * inner + 1));
    }

    #[test]
    fn selection_is_scale_invariant(seed in 0u64..500, pow in -3i32..6) {
        let data = synthetic(60, 3.0, seed);
        let s = 2f64.powi(pow);
        let scaled = data.with_targets(data.targets().iter().map(|y| y * s).collect()).unwrap();
        let plan = make_fold_plan(60, 3, 3, seed).unwrap();
        let est = Knn { ks: vec![1, 3, 5, 9] };
        for metric in [SelectionMetric::Mse, SelectionMetric::Mae] {
            let a = outer_evaluate(&est, &data, &plan, metric, seed).unwrap();
            let b = outer_evaluate(&est, &scaled, &plan, metric, seed).unwrap();
            for (fa, fb) in a.iter().zip(&b) {
                prop_assert_eq!(fa.selection.grid_index, fb.selection.grid_index);
                prop_assert_eq!(fa.metrics.mae * s, fb.metrics.mae);
                prop_assert_eq!(fa.metrics.mse * s * s, fb.metrics.mse);
            }
        }
    }

    #[test]
    fn larger_grid_never_scores_worse_inside(seed in 0u64..500) {
        let data = synthetic(50, 3.0, seed);
        let plan = make_fold_plan(50, 3, 3, seed).unwrap();
        let small = Knn { ks: vec![2, 6] };
        let large = Knn { ks: vec![2, 6, 1, 4, 12] };
        for o in 0..3 {
            let a = inner_select(&small, &data, &plan, o, SelectionMetric::Mse, seed).unwrap();
            let b = inner_select(&large, &data, &plan, o, SelectionMetric::Mse, seed).unwrap();
            prop_assert!(b.score <= a.score);
        }
    }
}

#[test]
fn noise_free_truth_is_always_selected() {
    let data = synthetic(80, 0.0, 2);
    let plan = make_fold_plan(80, 4, 3, 2).unwrap();
    for metric in [SelectionMetric::Mse, SelectionMetric::Mae] {
        for f in outer_evaluate(&MeanOrTruth, &data, &plan, metric, 2).unwrap() {
            assert_eq!(f.selection.grid_index, 1);
            assert!(f.metrics.mae < 1e-9);
        }
    }
}

#[test]
fn identical_grid_points_keep_the_first() {
    let data = synthetic(40, 2.0, 3);
    let plan = make_fold_plan(40, 3, 3, 3).unwrap();
    let est = Knn { ks: vec![7, 3, 3, 3] };
    for f in outer_evaluate(&est, &data, &plan, SelectionMetric::Mse, 3).unwrap() {
        assert_ne!(f.selection.grid_index, 2);
        assert_ne!(f.selection.grid_index, 3);
    }
}

#[test]
fn constant_target_gives_zero_error_for_every_family() {
    let data = synthetic(48, 2.0, 5).with_targets(vec![121.25; 48]).unwrap();
    let plan = make_fold_plan(48, 3, 2, 5).unwrap();
    let specs: Vec<EstimatorSpec> = Family::ALL
        .iter()
        .map(|&f| {
            let mut s = EstimatorSpec::default_for(f);
            for (name, v) in [("rounds", 5.0), ("n_trees", 5.0), ("epochs", 5.0)] {
                if f.param(name).is_some() {
                    s.set_axis(name, vec![v]).unwrap();
                }
            }
            s
        })
        .collect();
    let ests: Vec<&dyn Estimator> = specs.iter().map(|s| s as &dyn Estimator).collect();
    let report = run_with_plan(&ests, &data, &plan, SelectionMetric::Mse).unwrap();
    for m in &report.models {
        let a = m.aggregate.unwrap_or_else(|| panic!("{} failed: {:?}", m.label, m.error));
        assert_eq!((a.mae, a.mse), (0.0, 0.0), "{}", m.label);
        if report.best.as_deref() != Some(m.label.as_str()) {
            assert_eq!((m.diff_mae, m.diff_mse), (Some(0.0), Some(0.0)));
        }
    }
}

#[test]
fn report_is_independent_of_thread_count() {
    let data = synthetic(90, 2.0, 8);
    let plan = make_fold_plan(90, 3, 2, 8).unwrap();
    let specs: Vec<EstimatorSpec> = [Family::Xgbr, Family::Rf, Family::Ann]
        .iter()
        .map(|&f| {
            let mut s = EstimatorSpec::default_for(f);
            for (name, v) in [("rounds", vec![10.0]), ("n_trees", vec![8.0, 12.0]), ("epochs", vec![8.0])] {
                if f.param(name).is_some() {
                    s.set_axis(name, v).unwrap();
                }
            }
            s
        })
        .collect();
    let ests: Vec<&dyn Estimator> = specs.iter().map(|s| s as &dyn Estimator).collect();
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_with_plan(&ests, &data, &plan, SelectionMetric::Mse).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&run(1)).unwrap());
}

#[test]
fn conventional_baseline_is_optimistic_for_the_same_grid() {
    let data = synthetic(60, 4.0, 9);
    let plan = make_fold_plan(60, 3, 3, 9).unwrap();
    let est = Knn { ks: vec![1, 2, 4, 8, 16] };
    let conv = conventional_evaluate(&est, &data, &plan, SelectionMetric::Mse).unwrap();
    let nested = outer_evaluate(&est, &data, &plan, SelectionMetric::Mse, 9).unwrap();
    let nested_mse = nested.iter().map(|f| f.metrics.mse).sum::<f64>() / 3.0;
    // The baseline takes the minimum over the same per-fold scores nested CV
    // averages over one choice per fold.
    assert!(conv.aggregate.mse <= nested_mse + 1e-12);
}
