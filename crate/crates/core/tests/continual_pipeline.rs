use snv_core::continual::{
    build_freeze_mask, run_sequence, CumulativeMask, SequenceConfig, Strategy, TrainerConfig,
};
use snv_core::metrics::{acc, bwt, cap, AccuracyMatrix};
use snv_core::network::{DenseNet, ParamIndex};
use snv_core::seed::indexed_rng;
use snv_core::tasks::{make_stream, StreamConfig, TaskSpec};
use snv_core::valuation::EstimatorConfig;

fn stream() -> Vec<TaskSpec> {
    make_stream(&StreamConfig {
        n_tasks: 4,
        classes_per_task: 2,
        input_dim: 6,
        samples_per_class: 40,
        blob_spread: 1.0,
        class_separation: 3.5,
        seed: 11,
    })
    .unwrap()
}

fn config(strategy: Strategy) -> SequenceConfig {
    SequenceConfig {
        estimator: EstimatorConfig {
            capacity_ratio: 0.2,
            truncation_threshold: Some(0.05),
            max_permutations: 200,
            seed: 5,
            ..EstimatorConfig::default()
        },
        trainer: TrainerConfig {
            learning_rate: 0.5,
            epochs: 40,
            batch_size: 16,
            patience: 40,
        },
        strategy,
        shuffle_seed: 9,
    }
}

fn net() -> DenseNet {
    DenseNet::new(&[6, 10, 8], &mut indexed_rng(1, 0)).unwrap()
}

fn param_bytes(net: &DenseNet, idx: ParamIndex) -> [u8; 8] {
    net.params().get(idx).to_le_bytes()
}

#[test]
fn frozen_parameters_never_move() {
    let tasks = stream();
    let out = run_sequence(net(), &tasks, &config(Strategy::Snv)).unwrap();
    let last = out.checkpoints.last().unwrap();
    for (t, snap) in out.snapshots.iter().enumerate() {
        let finalized: Vec<_> = tasks[..=t].iter().map(|x| x.classes.clone()).collect();
        let mask = build_freeze_mask(&snap.cumulative_mask, &out.checkpoints[t], &finalized).unwrap();
        let frozen: Vec<ParamIndex> = mask.frozen_indices(out.checkpoints[t].params()).collect();
        assert!(!frozen.is_empty());
        for idx in frozen {
            assert_eq!(
                param_bytes(&out.checkpoints[t], idx),
                param_bytes(last, idx),
                "task {} {idx:?}",
                t + 1
            );
        }
    }
}

#[test]
fn snapshot_replay_has_zero_backward_transfer() {
    let out = run_sequence(net(), &stream(), &config(Strategy::Snv)).unwrap();
    assert_eq!(bwt(&out.r_til).unwrap(), 0.0);
    for j in 0..4 {
        for i in j..4 {
            assert_eq!(out.r_til.get(i, j), out.r_til.get(j, j));
        }
    }
    assert!(acc(&out.r_til).unwrap() > 0.6);
}

#[test]
fn masks_respect_the_budget_and_grow() {
    let out = run_sequence(net(), &stream(), &config(Strategy::Snv)).unwrap();
    let k = config(Strategy::Snv).estimator.budget(10);
    assert_eq!(k, 2);
    let mut prev = CumulativeMask::empty(10);
    let mut caps = Vec::new();
    for (t, m) in out.masks.iter().enumerate() {
        assert_eq!(m.popcount(), k);
        assert_eq!(m.task_id, t + 1);
        let b = &out.snapshots[t].cumulative_mask;
        assert!(b.contains(&prev));
        prev = b.clone();
        caps.push(cap(&out.masks[..=t], &out.net).unwrap());
    }
    assert!(caps.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn naive_control_uses_no_masks() {
    let out = run_sequence(net(), &stream(), &config(Strategy::Naive)).unwrap();
    assert!(out.masks.is_empty());
    assert!(out.reports.is_empty());
    assert_eq!(out.r_til.n_tasks(), 4);
}

#[test]
fn runs_are_reproducible() {
    let a = run_sequence(net(), &stream(), &config(Strategy::Snv)).unwrap();
    let b = run_sequence(net(), &stream(), &config(Strategy::Snv)).unwrap();
    assert_eq!(a.r_til.to_csv(), b.r_til.to_csv());
    assert_eq!(a.r_cil.to_csv(), b.r_cil.to_csv());
    assert_eq!(a.masks, b.masks);
    assert_eq!(a.net.to_json().unwrap(), b.net.to_json().unwrap());
}

#[test]
fn checkpoints_survive_a_file_round_trip() {
    let out = run_sequence(net(), &stream(), &config(Strategy::Snv)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    std::fs::write(&path, out.net.to_json().unwrap()).unwrap();
    let back = DenseNet::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back.params(), out.net.params());
    assert_eq!(back.to_json().unwrap(), out.net.to_json().unwrap());
}

#[test]
fn accuracy_matrix_csv_round_trip() {
    let out = run_sequence(net(), &stream(), &config(Strategy::Snv)).unwrap();
    let back = AccuracyMatrix::from_csv(&out.r_cil.to_csv()).unwrap();
    assert_eq!(back, out.r_cil);
    assert_eq!(acc(&back).unwrap(), acc(&out.r_cil).unwrap());
    assert_eq!(bwt(&back).unwrap(), bwt(&out.r_cil).unwrap());
}
