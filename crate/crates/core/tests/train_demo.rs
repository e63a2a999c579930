use rst_core::train::{bundled_data_dir, load_pairs, train_demo, TrainLog, MAX_STEPS};
use rst_core::{RunConfig, Tensor};

fn bundled() -> Vec<(Tensor<f32>, Tensor<f32>)> {
    load_pairs::<f32>(&bundled_data_dir())
        .unwrap()
        .into_iter()
        .map(|(_, b, s)| (b, s))
        .collect()
}

#[test]
fn short_run_reduces_loss() {
    let out = train_demo(&RunConfig::tiny(), &bundled(), 30, 0).unwrap();
    assert_eq!(out.log.steps.len(), 30);
    assert!(out.log.trailing_mean(30, 5) < out.log.trailing_mean(5, 5));
}

#[test]
fn seeded_runs_repeat_exactly() {
    let data = bundled();
    let a = train_demo(&RunConfig::tiny(), &data, 50, 7).unwrap();
    let b = train_demo(&RunConfig::tiny(), &data, 50, 7).unwrap();
    assert_eq!(a.log.to_csv(), b.log.to_csv());
    assert_eq!(a.weights.flatten(), b.weights.flatten());
}

#[test]
fn log_csv_layout() {
    let log = train_demo(&RunConfig::tiny(), &bundled(), 2, 3).unwrap().log;
    let csv = log.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "# seed=3");
    assert_eq!(lines[1], "step,lr,loss");
    assert!(lines[2].starts_with("1,1e-3,"));
    assert_eq!(lines.len(), 4);
    let empty = TrainLog { seed: 0, steps: vec![] };
    assert_eq!(empty.to_csv(), "# seed=0\nstep,lr,loss\n");
}

#[test]
fn rejects_bad_requests() {
    let data = bundled();
    assert!(train_demo(&RunConfig::tiny(), &data, MAX_STEPS + 1, 0).is_err());
    assert!(train_demo::<f32>(&RunConfig::tiny(), &[], 1, 0).is_err());
    let mismatched = vec![(data[0].0.clone(), Tensor::zeros(&[3, 16, 32]))];
    assert!(train_demo(&RunConfig::tiny(), &mismatched, 1, 0).is_err());
}

#[test]
fn missing_data_dir_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_pairs::<f32>(dir.path()).is_err());
}
