use umoe::data::{build_uncertain_dataset, impute_chained, inject_uncertainty, synthesize_dataset, Task, UncertainDataset};
use umoe::density::DensityModel;
use umoe::harness::{nested_cv, stratified_folds, Method, NCVConfig};
use umoe::model::{self, Predictor, Reducer, UMoEConfig};
use umoe::nn::TrainConfig;
use umoe::seed;

fn small_model() -> UMoEConfig {
    let t = TrainConfig { epochs: 10, ..TrainConfig::default() };
    UMoEConfig {
        samples_per_instance: 30,
        expert_hidden: vec![8],
        gate_hidden: vec![8],
        expert_train: t.clone(),
        gate_train: TrainConfig { batch_size: 24, ..t },
        seed: 3,
        ..UMoEConfig::default()
    }
}

#[test]
fn single_expert_is_the_mode_network() {
    let ds = synthesize_dataset(Task::Classification, 90, 4, 6).unwrap();
    let view = inject_uncertainty(&ds, 0.4, 1).unwrap();
    let uds = build_uncertain_dataset(&view, &impute_chained(&view, 20, 5, 2).unwrap(), 0.1, None).unwrap();
    let cfg = small_model().with_e_count(1);
    let moe = model::fit(&uds, &cfg).unwrap();
    let nn = model::fit_baseline_nn(&uds, Reducer::Mode, &cfg).unwrap();
    for x in &ds.features {
        assert_eq!(moe.predict_raw(x).unwrap(), nn.predict_raw(x).unwrap());
    }
}

#[test]
fn mode_and_mean_reducers() {
    let ds = synthesize_dataset(Task::Regression, 40, 3, 1).unwrap();
    let certain = UncertainDataset::from_certain(&ds);
    let cfg = small_model();
    assert_eq!(
        model::reduce_dataset(&certain, Reducer::Mode, &cfg, None).unwrap(),
        model::reduce_dataset(&certain, Reducer::Mean, &cfg, None).unwrap()
    );
    let mut bimodal = certain.clone();
    let inst = &mut bimodal.instances[0];
    inst.certain_dims = vec![0, 1];
    let z = inst.certain_values[2];
    inst.certain_values.truncate(2);
    inst.density = Some(DensityModel::new(vec![vec![z - 1.0], vec![z - 1.0], vec![z + 1.0]], 0.1, vec![2]).unwrap());
    let mode = model::reduce_dataset(&bimodal, Reducer::Mode, &cfg, None).unwrap();
    let mean = model::reduce_dataset(&bimodal, Reducer::Mean, &cfg, None).unwrap();
    assert!((mean[0][2] - (z - 1.0 / 3.0)).abs() < 1e-12);
    assert!((mode[0][2] - (z - 1.0)).abs() < 1e-6);
}

/// Changing the features of outer-test rows must not move anything fit on
/// the training rows of that fold.
#[test]
fn test_rows_do_not_leak_into_training_artifacts() {
    let ds = synthesize_dataset(Task::Regression, 60, 3, 8).unwrap();
    let cfg = NCVConfig {
        outer_folds: 3,
        inner_folds: 2,
        subspace_candidates: vec![2],
        methods: vec![Method::UMoE, Method::MoEMean],
        draws: 5,
        sweeps: 2,
        model: small_model(),
        seed: 12,
        ..NCVConfig::default()
    };
    let base = nested_cv(&ds, &cfg).unwrap();
    let folds = stratified_folds(&ds.labels, ds.task, 3, seed::derive(cfg.seed, seed::tag::OUTER, u64::MAX)).unwrap();
    for (f, test) in folds.iter().enumerate() {
        let mut moved = ds.clone();
        for &i in test {
            moved.features[i].iter_mut().for_each(|v| *v = *v * 3.0 + 7.0);
        }
        let r = nested_cv(&moved, &cfg).unwrap();
        let a = base.folds[f].artifacts.as_ref().unwrap();
        let b = r.folds[f].artifacts.as_ref().unwrap();
        assert_eq!(a.hash(), b.hash(), "fold {f}");
        assert_ne!(base.folds[f].records[0].metric, r.folds[f].records[0].metric);
    }
}
