//! `hpo`: grid search scored on the first task's validation split.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use snv_core::continual::{run_sequence, til_accuracy};

use crate::config::ExperimentConfig;
use crate::error::{read, write, CliError, CliResult};
use crate::run::{initial_net, load_stream};

/// Candidate values per hyperparameter; a missing key keeps the value from
/// the base configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub learning_rate: Option<Vec<f64>>,
    pub capacity_ratio: Option<Vec<f64>>,
    /// `-inf` stands for "no truncation".
    pub truncation_threshold: Option<Vec<f64>>,
    pub confidence: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub learning_rate: f64,
    pub capacity_ratio: f64,
    pub truncation_threshold: Option<f64>,
    pub confidence: f64,
}

impl Candidate {
    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        cfg.trainer.learning_rate = self.learning_rate;
        cfg.estimator.capacity_ratio = self.capacity_ratio;
        cfg.estimator.truncation_threshold = self.truncation_threshold;
        cfg.estimator.confidence = self.confidence;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub candidate: Candidate,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HpoBest {
    pub index: usize,
    pub candidate: Candidate,
    pub val_accuracy: f64,
    pub config: ExperimentConfig,
}

impl Grid {
    pub fn load(path: &Path) -> CliResult<Self> {
        toml::from_str(&read(path)?)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Cartesian product in the order learning rate, capacity, threshold,
    /// confidence (last varies fastest).
    pub fn candidates(&self, base: &ExperimentConfig) -> CliResult<Vec<Candidate>> {
        fn axis(name: &str, v: &Option<Vec<f64>>, fallback: f64) -> CliResult<Vec<f64>> {
            match v {
                None => Ok(vec![fallback]),
                Some(v) if v.is_empty() => Err(CliError::Config(format!("empty grid for `{name}`"))),
                Some(v) => Ok(v.clone()),
            }
        }
        let lr = axis("learning_rate", &self.learning_rate, base.trainer.learning_rate)?;
        let c = axis("capacity_ratio", &self.capacity_ratio, base.estimator.capacity_ratio)?;
        let tau = axis(
            "truncation_threshold",
            &self.truncation_threshold,
            base.estimator.truncation_threshold.unwrap_or(f64::NEG_INFINITY),
        )?;
        let alpha = axis("confidence", &self.confidence, base.estimator.confidence)?;
        let mut out = Vec::new();
        for &learning_rate in &lr {
            for &capacity_ratio in &c {
                for &t in &tau {
                    for &confidence in &alpha {
                        out.push(Candidate {
                            learning_rate,
                            capacity_ratio,
                            truncation_threshold: (t != f64::NEG_INFINITY).then_some(t),
                            confidence,
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Trains task 1 only under `cfg` and returns its validation accuracy.
pub fn score(cfg: &ExperimentConfig) -> CliResult<f64> {
    cfg.validate()?;
    let tasks = load_stream(cfg)?;
    let first = &tasks[..1];
    let net = initial_net(cfg, &tasks)?;
    let outcome = run_sequence(net, first, &cfg.sequence_config())?;
    let task = &first[0];
    Ok(til_accuracy(
        &outcome.net,
        &outcome.snapshots,
        task.task_id,
        &task.val,
        outcome.til_mode(),
    )?)
}

pub fn execute(base: &ExperimentConfig, grid: &Grid) -> CliResult<(Vec<TraceRow>, HpoBest)> {
    let candidates = grid.candidates(base)?;
    let mut trace = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, cand) in candidates.iter().enumerate() {
        let val_accuracy = score(&cand.apply(base))?;
        log::info!("candidate {i}: {cand:?} -> {val_accuracy}");
        if best.is_none_or(|(_, b)| val_accuracy > b) {
            best = Some((i, val_accuracy));
        }
        trace.push(TraceRow {
            candidate: *cand,
            val_accuracy,
        });
    }
    let (index, val_accuracy) = best.expect("grid is non-empty");
    let candidate = candidates[index];
    Ok((
        trace,
        HpoBest {
            index,
            candidate,
            val_accuracy,
            config: candidate.apply(base),
        },
    ))
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out =
        String::from("candidate,learning_rate,capacity_ratio,truncation_threshold,confidence,val_accuracy\n");
    for (i, r) in rows.iter().enumerate() {
        let c = &r.candidate;
        let tau = c.truncation_threshold.map(|t| format!("{t:?}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{i},{:?},{:?},{tau},{:?},{:?}",
            c.learning_rate, c.capacity_ratio, c.confidence, r.val_accuracy
        );
    }
    out
}

pub fn write_outputs(dir: &Path, trace: &[TraceRow], best: &HpoBest) -> CliResult<()> {
    write(&dir.join("hpo_trace.csv"), trace_csv(trace))?;
    write(
        &dir.join("hpo_best.json"),
        serde_json::to_string_pretty(best).expect("serializable") + "\n",
    )?;
    write(&dir.join("hpo_best.toml"), best.config.to_toml())?;
    Ok(())
}
