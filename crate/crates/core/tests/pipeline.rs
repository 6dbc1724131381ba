//! Cross-module flows through real files: datasets, checkpoints and
//! reports written to disk and read back into a working filter.

use nkmle::datagen::{dataset_from_container, dataset_to_container, generate_dataset};
use nkmle::harness::config::parse_config_str;
use nkmle::harness::{
    filter_dataset, load_model, run_experiment, save_model, train_models, TrainedModels,
};
use nkmle::ssm::{DynamicModel, MeasurementModel, ScenarioConfig};
use nkmle::trainer::TargetKind;
use nkmle::Container;

#[test]
fn dataset_survives_disk_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig {
        m_train: 5,
        m_test: 3,
        t_steps: 8,
        seed: 21,
        ..ScenarioConfig::lorenz_defaults()
    };
    let (train, test) = generate_dataset(&cfg);
    let train_path = tmp.path().join("train.nkmle");
    let test_path = tmp.path().join("test.nkmle");
    dataset_to_container(&train).save(&train_path).unwrap();
    dataset_to_container(&test).save(&test_path).unwrap();

    let train2 = dataset_from_container(&Container::load(&train_path).unwrap()).unwrap();
    let test2 = dataset_from_container(&Container::load(&test_path).unwrap()).unwrap();
    assert_eq!(train, train2);
    assert_eq!(test, test2);
}

#[test]
fn filtering_with_reloaded_models_matches_in_memory_run() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "scenario=lorenz\narm=unknown_all\nseed=6\nm_train=10\nm_test=5\nT=8\nr=1e-2\n\
        f_hidden=8\nf_n_coord=2\nf_n_epochs=3\nf_batch_size=16\n\
        h_hidden=8\nh_n_coord=2\nh_n_epochs=3\nh_batch_size=16\n";
    let cfg = parse_config_str(text).unwrap();
    let (train, test) = generate_dataset(&cfg.scenario);
    let models = train_models(&cfg, &train).unwrap();
    let direct = filter_dataset(&cfg, &test, &models).unwrap();

    let dyn_path = tmp.path().join("dynamic.nkmle");
    let meas_path = tmp.path().join("measurement.nkmle");
    save_model(
        &dyn_path,
        TargetKind::Dynamic,
        &models.dynamic.mean,
        &models.dynamic.noise_cov,
        &cfg.scenario,
        cfg.seed,
    )
    .unwrap();
    save_model(
        &meas_path,
        TargetKind::Measurement,
        &models.measurement.mean,
        &models.measurement.noise_cov,
        &cfg.scenario,
        cfg.seed,
    )
    .unwrap();

    let (dyn_mean, dyn_cov) = load_model(&dyn_path).unwrap();
    let (meas_mean, meas_cov) = load_model(&meas_path).unwrap();
    let reloaded = TrainedModels {
        dynamic: DynamicModel {
            mean: dyn_mean,
            noise_cov: dyn_cov,
        },
        measurement: MeasurementModel {
            mean: meas_mean,
            noise_cov: meas_cov,
        },
        f_report: None,
        h_report: None,
    };
    let from_disk = filter_dataset(&cfg, &test, &reloaded).unwrap();
    assert_eq!(direct.posterior_means, from_disk.posterior_means);
    assert_eq!(
        direct.report.overall.to_bits(),
        from_disk.report.overall.to_bits()
    );
}

#[test]
fn lorenz_known_all_filters_cleanly() {
    let cfg = parse_config_str(
        "scenario=lorenz\narm=known_all\nseed=4\nm_train=2\nm_test=20\nT=25\nr=1e-2\n",
    )
    .unwrap();
    let run = run_experiment(&cfg).unwrap();
    assert_eq!(run.outputs.report.per_step.len(), 25);
    assert!(run.outputs.report.overall.is_finite());
    assert!(run.outputs.report.overall < 1.0, "known-model filter should track");
}

#[test]
fn normalized_inputs_round_trip_through_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "scenario=bilateration\narm=unknown_all\nseed=8\nm_train=6\nm_test=4\nT=6\n\
        normalize_inputs=true\n\
        f_hidden=8\nf_n_coord=1\nf_n_epochs=2\nf_batch_size=16\n\
        h_hidden=8\nh_n_coord=1\nh_n_epochs=2\nh_batch_size=16\n";
    let cfg = parse_config_str(text).unwrap();
    let (train, test) = generate_dataset(&cfg.scenario);
    let models = train_models(&cfg, &train).unwrap();
    assert!(models.f_report.as_ref().unwrap().input_norm.is_some());

    let path = tmp.path().join("dyn.nkmle");
    save_model(
        &path,
        TargetKind::Dynamic,
        &models.dynamic.mean,
        &models.dynamic.noise_cov,
        &cfg.scenario,
        cfg.seed,
    )
    .unwrap();
    let (mean, _) = load_model(&path).unwrap();
    assert_eq!(mean, models.dynamic.mean);

    // filtering works with the normalized model
    let out = filter_dataset(&cfg, &test, &models).unwrap();
    assert!(out.report.overall.is_finite());
}
