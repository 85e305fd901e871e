mod common;

use anm::core::planner::NoClock;
use anm::core::stochastic::ProcessKind;
use anm::harness::{simulate_run, ExperimentConfig, PolicyKind};
use anm::io::{self, GmmFile, GMM_FORMAT};
use anm::Error;

fn write_models(dir: &std::path::Path) -> anm::core::stochastic::ModelSet {
    let models = common::simple_models();
    for kind in ProcessKind::ALL {
        let m = models.get(kind);
        let file = GmmFile {
            format: GMM_FORMAT.into(),
            kind,
            order: (m.lags(), m.n_components()),
            seed: 1,
            model: m.params().clone(),
            fit: None,
        };
        io::write_json(&io::model_path(dir, kind), &file).unwrap();
    }
    models
}

#[test]
fn model_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let models = write_models(dir.path());
    assert_eq!(io::read_models(dir.path()).unwrap(), models);
}

#[test]
fn model_of_the_wrong_kind_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_models(dir.path());
    std::fs::copy(io::model_path(dir.path(), ProcessKind::Wind), io::model_path(dir.path(), ProcessKind::Load)).unwrap();
    let err = io::read_models(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Input { .. }), "{err}");
    assert!(err.to_string().contains("expected load"), "{err}");
    assert_eq!(err.exit_code(), anm::error::EXIT_INPUT);
}

#[test]
fn missing_model_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    write_models(dir.path());
    std::fs::remove_file(io::model_path(dir.path(), ProcessKind::Irradiance)).unwrap();
    let err = io::read_models(dir.path()).unwrap_err();
    assert!(err.to_string().contains("irradiance.json"), "{err}");
    assert_eq!(err.exit_code(), anm::error::EXIT_INPUT);
}

#[test]
fn trace_csv_round_trips() {
    let env = common::weak_environment(40_000.0, common::default_flex());
    let config = ExperimentConfig { runs: 1, steps: 6, start_quarter: 44, ..ExperimentConfig::desk() };
    let trace = simulate_run(&env, PolicyKind::Noop, &config, 0, &NoClock);
    assert!(trace.summary.failure.is_none());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    io::write_atomic(&path, &io::trace_csv(&trace.records)).unwrap();
    let header = std::fs::read_to_string(&path).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, io::TRACE_COLUMNS.join(","));
    assert_eq!(io::read_trace(&path).unwrap(), trace.records);
}
