//! Sequential training with Shapley-selected, frozen subnetworks.
//!
//! For each task the network is trained with the parameters of all
//! previously selected neurons frozen, the task's neurons are valued on its
//! validation split, the top `floor(c * N)` join the cumulative mask, and a
//! snapshot of the task head and ablation means is stored. Task-aware
//! inference replays a task through its snapshot, so later training cannot
//! change its predictions.

mod mask;

use std::ops::Range;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use mask::{
    build_freeze_mask, masked_update, union_mask, CumulativeMask, FreezeMask, TaskMask,
};

use crate::error::{Error, Result};
use crate::game::Memoized;
use crate::metrics::AccuracyMatrix;
use crate::network::{argmax, performance_oracle, AblationSpec, DenseNet, Params};
use crate::seed::{derive_seed, stream_rng};
use crate::tasks::{Sample, TaskSpec};
use crate::valuation::{estimate_snv, EstimateReport, EstimatorConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation-loss improvement before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
}

fn default_patience() -> usize {
    10
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            learning_rate: 0.05,
            epochs: 50,
            batch_size: 16,
            patience: default_patience(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("epochs, batch_size and patience must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Validation loss before the first epoch.
    pub initial_val_loss: f64,
    /// Epoch (1-based) whose weights were kept; 0 means none improved.
    pub best_epoch: usize,
}

fn split_xy(samples: &[Sample]) -> (Vec<Vec<f64>>, Vec<usize>) {
    samples.iter().map(|s| (s.x.clone(), s.label)).unzip()
}

/// Minibatch SGD on one task's partition with early stopping on
/// validation loss. The best weights seen are restored at the end.
pub fn train_task<R: Rng + ?Sized>(
    net: &mut DenseNet,
    task: &TaskSpec,
    freeze: &FreezeMask,
    cfg: &TrainerConfig,
    rng: &mut R,
) -> Result<LossTrace> {
    cfg.validate()?;
    if task.train.is_empty() || task.val.is_empty() {
        return Err(Error::Data(format!(
            "task {} needs non-empty train and val splits",
            task.task_id
        )));
    }
    let partition = Some(task.classes.clone());
    let (train_x, train_y) = split_xy(&task.train);
    let (val_x, val_y) = split_xy(&task.val);

    let initial_val_loss = net.loss(&val_x, &val_y, partition.clone())?;
    let mut best_loss = initial_val_loss;
    let mut best: Params = net.params().clone();
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut trace = LossTrace {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        initial_val_loss,
        best_epoch: 0,
    };

    let mut order: Vec<usize> = (0..train_x.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let xs: Vec<Vec<f64>> = chunk.iter().map(|&i| train_x[i].clone()).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| train_y[i]).collect();
            let (_, g) = net.grad(&xs, &ys, partition.clone())?;
            masked_update(net.params_mut(), &g, freeze, cfg.learning_rate)?;
        }
        let train_loss = net.loss(&train_x, &train_y, partition.clone())?;
        let val_loss = net.loss(&val_x, &val_y, partition.clone())?;
        trace.train_loss.push(train_loss);
        trace.val_loss.push(val_loss);
        if val_loss < best_loss {
            best_loss = val_loss;
            best = net.params().clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    *net.params_mut() = best;
    trace.best_epoch = best_epoch;
    Ok(trace)
}

/// Output-layer rows of one class partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub partition: Range<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

impl HeadParams {
    pub fn copy_from(net: &DenseNet, partition: Range<usize>) -> Self {
        let out = net.output_layer();
        let w = &net.params().weights[out];
        HeadParams {
            weights: partition.clone().map(|r| w.row(r).to_vec()).collect(),
            biases: partition.clone().map(|r| net.params().biases[out][r]).collect(),
            partition,
        }
    }
}

/// Everything needed to replay a task's function after later training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSnapshot {
    pub task_id: usize,
    pub cumulative_mask: CumulativeMask,
    pub means_at_freeze: Vec<f64>,
    pub head: HeadParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    /// Ablate neurons outside the task's cumulative mask and use its stored head.
    SnapshotReplay,
    /// Use the live network restricted to the task's partition.
    Live,
}

fn find_snapshot(snapshots: &[TaskSnapshot], task_id: usize) -> Result<&TaskSnapshot> {
    snapshots
        .iter()
        .find(|s| s.task_id == task_id)
        .ok_or_else(|| Error::Precondition(format!("no snapshot for task {task_id}")))
}

/// Task-aware prediction.
pub fn til_inference(
    net: &DenseNet,
    snapshots: &[TaskSnapshot],
    task_id: usize,
    x: &[f64],
    mode: InferenceMode,
) -> Result<usize> {
    let snap = find_snapshot(snapshots, task_id)?;
    match mode {
        InferenceMode::Live => net.predict(x, None, Some(snap.head.partition.clone())),
        InferenceMode::SnapshotReplay => {
            let ablation = AblationSpec::new(
                snap.cumulative_mask.to_coalition(),
                snap.means_at_freeze.clone(),
            );
            let hidden = net.hidden_activations(x, Some(&ablation))?;
            let last = hidden.last().expect("at least one hidden layer");
            let logits: Vec<f64> = snap
                .head
                .weights
                .iter()
                .zip(&snap.head.biases)
                .map(|(row, b)| row.iter().zip(last).fold(*b, |acc, (w, h)| acc + w * h))
                .collect();
            Ok(snap.head.partition.start + argmax(&logits))
        }
    }
}

/// Task-agnostic prediction: argmax over every class of the live network.
pub fn cil_inference(net: &DenseNet, x: &[f64]) -> Result<usize> {
    net.predict(x, None, None)
}

pub fn til_accuracy(
    net: &DenseNet,
    snapshots: &[TaskSnapshot],
    task_id: usize,
    data: &[Sample],
    mode: InferenceMode,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("accuracy over an empty set".into()));
    }
    let mut correct = 0;
    for s in data {
        if til_inference(net, snapshots, task_id, &s.x, mode)? == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

pub fn cil_accuracy(net: &DenseNet, data: &[Sample]) -> Result<f64> {
    net.accuracy(data, None, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Shapley-selected subnetworks with freezing and snapshot replay.
    Snv,
    /// Plain sequential SGD: no freezing, no valuation, live inference.
    Naive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceConfig {
    pub estimator: EstimatorConfig,
    pub trainer: TrainerConfig,
    pub strategy: Strategy,
    /// Root of the minibatch-shuffling streams.
    pub shuffle_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskTiming {
    pub train_secs: f64,
    pub valuation_secs: f64,
}

#[derive(Debug, Clone)]
pub struct SequenceOutcome {
    pub net: DenseNet,
    /// Task-aware accuracies (snapshot replay for SNV, live for naive).
    pub r_til: AccuracyMatrix,
    /// Task-agnostic accuracies of the live network.
    pub r_cil: AccuracyMatrix,
    pub masks: Vec<TaskMask>,
    pub cumulative: CumulativeMask,
    pub snapshots: Vec<TaskSnapshot>,
    pub reports: Vec<EstimateReport>,
    pub traces: Vec<LossTrace>,
    /// Network state at the end of each task.
    pub checkpoints: Vec<DenseNet>,
    pub warnings: Vec<String>,
    pub timings: Vec<TaskTiming>,
}

impl SequenceOutcome {
    pub fn til_mode(&self) -> InferenceMode {
        if self.masks.is_empty() {
            InferenceMode::Live
        } else {
            InferenceMode::SnapshotReplay
        }
    }
}

fn frozen_bits(net: &DenseNet, freeze: &FreezeMask) -> Vec<u64> {
    let p = net.params();
    freeze.frozen_indices(p).map(|i| p.get(i).to_bits()).collect()
}

/// Runs the full task sequence.
pub fn run_sequence(
    mut net: DenseNet,
    tasks: &[TaskSpec],
    cfg: &SequenceConfig,
) -> Result<SequenceOutcome> {
    if tasks.is_empty() {
        return Err(Error::Precondition("no tasks".into()));
    }
    cfg.trainer.validate()?;
    cfg.estimator.validate()?;
    for t in tasks {
        if t.classes.is_empty() || t.classes.end > net.output_dim() {
            return Err(Error::Data(format!(
                "task {} classes {:?} do not fit {} outputs",
                t.task_id,
                t.classes,
                net.output_dim()
            )));
        }
        if t.test.is_empty() || t.val.is_empty() {
            return Err(Error::Data(format!("task {} has an empty split", t.task_id)));
        }
    }

    let n = net.n_neurons();
    let n_tasks = tasks.len();
    let snv = cfg.strategy == Strategy::Snv;
    let til_mode = if snv { InferenceMode::SnapshotReplay } else { InferenceMode::Live };

    let mut cumulative = CumulativeMask::empty(n);
    let mut r_til = AccuracyMatrix::new(n_tasks);
    let mut r_cil = AccuracyMatrix::new(n_tasks);
    let mut out = SequenceOutcome {
        net: net.clone(),
        r_til: AccuracyMatrix::new(0),
        r_cil: AccuracyMatrix::new(0),
        masks: Vec::new(),
        cumulative: cumulative.clone(),
        snapshots: Vec::new(),
        reports: Vec::new(),
        traces: Vec::new(),
        checkpoints: Vec::new(),
        warnings: Vec::new(),
        timings: Vec::new(),
    };

    for (t, task) in tasks.iter().enumerate() {
        let finalized: Vec<Range<usize>> = if snv {
            tasks[..t].iter().map(|p| p.classes.clone()).collect()
        } else {
            Vec::new()
        };
        let freeze = if snv {
            build_freeze_mask(&cumulative, &net, &finalized)?
        } else {
            FreezeMask::all_trainable(net.params())
        };
        if snv && cumulative.is_full() {
            let msg = format!(
                "capacity exhausted before task {}: every neuron is frozen, training the head only",
                task.task_id
            );
            log::warn!("{msg}");
            out.warnings.push(msg);
        }

        let before = frozen_bits(&net, &freeze);
        let started = Instant::now();
        let mut rng = stream_rng(cfg.shuffle_seed, &format!("shuffle-{}", task.task_id));
        let trace = train_task(&mut net, task, &freeze, &cfg.trainer, &mut rng)?;
        let train_secs = started.elapsed().as_secs_f64();
        if frozen_bits(&net, &freeze) != before {
            return Err(Error::Invariant(format!(
                "frozen parameters changed while training task {}",
                task.task_id
            )));
        }
        out.traces.push(trace);

        let started = Instant::now();
        if snv {
            let means = net.record_means(&TaskSpec::inputs(&task.val))?;
            let oracle = Memoized::new(performance_oracle(
                &net,
                &task.val,
                means.clone(),
                Some(task.classes.clone()),
            )?);
            let est_cfg = EstimatorConfig {
                seed: derive_seed(cfg.estimator.seed, &format!("task-{}", task.task_id)),
                ..cfg.estimator.clone()
            };
            let mut report = estimate_snv(&oracle, &est_cfg)?;
            report.mask.task_id = task.task_id;
            let next = union_mask(&cumulative, &report.mask)?;
            if !next.contains(&cumulative) {
                return Err(Error::Invariant("cumulative mask shrank".into()));
            }
            cumulative = next;
            out.masks.push(report.mask.clone());
            out.reports.push(report);
            out.snapshots.push(TaskSnapshot {
                task_id: task.task_id,
                cumulative_mask: cumulative.clone(),
                means_at_freeze: means,
                head: HeadParams::copy_from(&net, task.classes.clone()),
            });
        } else {
            out.snapshots.push(TaskSnapshot {
                task_id: task.task_id,
                cumulative_mask: cumulative.clone(),
                means_at_freeze: vec![0.0; n],
                head: HeadParams::copy_from(&net, task.classes.clone()),
            });
        }
        let valuation_secs = started.elapsed().as_secs_f64();
        out.timings.push(TaskTiming {
            train_secs,
            valuation_secs,
        });

        for (k, seen) in tasks[..=t].iter().enumerate() {
            let til = til_accuracy(&net, &out.snapshots, seen.task_id, &seen.test, til_mode)?;
            r_til.set(t, k, til)?;
            r_cil.set(t, k, cil_accuracy(&net, &seen.test)?)?;
        }
        out.checkpoints.push(net.clone());
    }

    out.net = net;
    out.r_til = r_til;
    out.r_cil = r_cil;
    out.cumulative = cumulative;
    Ok(out)
}
