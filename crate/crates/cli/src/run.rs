//! `run`: train the whole stream and write the artifact directory.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use snv_core::continual::{run_sequence, SequenceOutcome, Strategy, TaskSnapshot};
use snv_core::metrics::{self, AccuracyMatrix};
use snv_core::network::{Checkpoint, DenseNet};
use snv_core::seed::stream_rng;
use snv_core::tasks::{import_stream, make_stream, Sample, TaskSpec};

use crate::config::{ExperimentConfig, Scenario};
use crate::error::{write, CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub acc: f64,
    /// `None` when there is only one task.
    pub bwt: Option<f64>,
    pub bwt_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: Scenario,
    pub strategy: Strategy,
    pub n_tasks: usize,
    pub n_neurons: usize,
    /// Neurons selected per task, `floor(c * N)`.
    pub budget: usize,
    /// Headline numbers: task-aware unless the scenario is `cil`.
    pub acc: f64,
    pub bwt: Option<f64>,
    pub bwt_pct: Option<f64>,
    pub cap_pct: Option<f64>,
    pub jaccard: Vec<Vec<f64>>,
    pub pruning_curve: Option<Vec<(f64, f64)>>,
    pub final_cil_accuracy: f64,
    pub scenarios: BTreeMap<String, ScenarioMetrics>,
    pub popcounts: Vec<usize>,
    pub permutations_used: Vec<usize>,
    pub converged: Vec<bool>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotFile {
    pub snapshot: TaskSnapshot,
    pub checkpoint: Checkpoint,
}

/// Everything a run produces, before it is written out.
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub tasks: Vec<TaskSpec>,
    pub outcome: SequenceOutcome,
    pub summary: Summary,
}

pub fn load_stream(cfg: &ExperimentConfig) -> CliResult<Vec<TaskSpec>> {
    match (&cfg.stream, &cfg.stream_dir) {
        (Some(s), _) => Ok(make_stream(&cfg.stream_config(s))?),
        (None, Some(dir)) => import_stream(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display()))),
        (None, None) => Err(CliError::Config("no stream configured".into())),
    }
}

pub fn initial_net(cfg: &ExperimentConfig, tasks: &[TaskSpec]) -> CliResult<DenseNet> {
    let first = tasks
        .first()
        .ok_or_else(|| CliError::Data("stream has no tasks".into()))?;
    let input_dim = first
        .train
        .first()
        .map(|s| s.x.len())
        .ok_or_else(|| CliError::Data("task 1 has no training samples".into()))?;
    let n_out = tasks.iter().map(|t| t.classes.end).max().unwrap_or(0);
    let mut sizes = vec![input_dim];
    sizes.extend(&cfg.network.hidden);
    sizes.push(n_out);
    Ok(DenseNet::new(&sizes, &mut stream_rng(cfg.seed, "init"))?)
}

pub fn pooled(tasks: &[TaskSpec], pick: impl Fn(&TaskSpec) -> &[Sample]) -> Vec<Sample> {
    tasks.iter().flat_map(|t| pick(t).iter().cloned()).collect()
}

/// Mean of the per-task value vectors.
pub fn mean_phi(phis: &[Vec<f64>]) -> Option<Vec<f64>> {
    let first = phis.first()?;
    let mut out = vec![0.0; first.len()];
    for p in phis {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    let t = phis.len() as f64;
    out.iter_mut().for_each(|o| *o /= t);
    Some(out)
}

/// Accuracy over all classes of the pooled test sets as the lowest-valued
/// neurons are mean-ablated (means from the pooled validation sets).
pub fn run_pruning_curve(
    net: &DenseNet,
    tasks: &[TaskSpec],
    phis: &[Vec<f64>],
    fractions: &[f64],
) -> CliResult<Option<Vec<(f64, f64)>>> {
    let Some(phi) = mean_phi(phis) else {
        return Ok(None);
    };
    let val: Vec<Vec<f64>> = pooled(tasks, |t| &t.val).into_iter().map(|s| s.x).collect();
    let means = net.record_means(&val)?;
    let test = pooled(tasks, |t| &t.test);
    Ok(Some(metrics::pruning_curve(net, &phi, &test, &means, fractions)?))
}

fn scenario_metrics(r: &AccuracyMatrix) -> CliResult<ScenarioMetrics> {
    let acc = metrics::acc(r)?;
    let bwt = if r.n_tasks() >= 2 { Some(metrics::bwt(r)?) } else { None };
    Ok(ScenarioMetrics {
        acc,
        bwt,
        bwt_pct: bwt.map(|b| 100.0 * b),
    })
}

pub fn execute(cfg: &ExperimentConfig) -> CliResult<RunOutput> {
    cfg.validate()?;
    let tasks = load_stream(cfg)?;
    let net = initial_net(cfg, &tasks)?;
    let outcome = run_sequence(net, &tasks, &cfg.sequence_config())?;
    let summary = summarize(cfg, &tasks, &outcome)?;
    Ok(RunOutput {
        config: cfg.clone(),
        tasks,
        outcome,
        summary,
    })
}

pub fn summarize(
    cfg: &ExperimentConfig,
    tasks: &[TaskSpec],
    outcome: &SequenceOutcome,
) -> CliResult<Summary> {
    let mut scenarios = BTreeMap::new();
    if cfg.scenario.includes_til() {
        scenarios.insert("til".to_string(), scenario_metrics(&outcome.r_til)?);
    }
    if cfg.scenario.includes_cil() {
        scenarios.insert("cil".to_string(), scenario_metrics(&outcome.r_cil)?);
    }
    let headline = if cfg.scenario == Scenario::Cil {
        &scenarios["cil"]
    } else {
        &scenarios["til"]
    };
    let net = &outcome.net;
    let cap_pct = if outcome.masks.is_empty() {
        None
    } else {
        Some(metrics::cap(&outcome.masks, net)?)
    };
    let phis: Vec<Vec<f64>> = outcome.reports.iter().map(|r| r.phi_hat.clone()).collect();
    let pruning_curve = run_pruning_curve(net, tasks, &phis, &cfg.analysis.pruning_fractions)?;
    let final_cil_accuracy = net.accuracy(&pooled(tasks, |t| &t.test), None, None)?;
    Ok(Summary {
        scenario: cfg.scenario,
        strategy: cfg.strategy,
        n_tasks: tasks.len(),
        n_neurons: net.n_neurons(),
        budget: cfg.estimator_config().budget(net.n_neurons()),
        acc: headline.acc,
        bwt: headline.bwt,
        bwt_pct: headline.bwt_pct,
        cap_pct,
        jaccard: metrics::overlap_matrix(&outcome.masks)?,
        pruning_curve,
        final_cil_accuracy,
        scenarios,
        popcounts: outcome.masks.iter().map(|m| m.popcount()).collect(),
        permutations_used: outcome.reports.iter().map(|r| r.permutations_used).collect(),
        converged: outcome.reports.iter().map(|r| r.converged).collect(),
        warnings: outcome.warnings.clone(),
    })
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

/// Writes the artifact directory. Everything except `meta.json` is a pure
/// function of the configuration.
pub fn write_artifacts(out: &RunOutput, dir: &Path) -> CliResult<()> {
    let o = &out.outcome;
    write(&dir.join("config.echo.json"), out.config.to_json())?;
    match out.config.scenario {
        Scenario::Til => write(&dir.join("R.csv"), o.r_til.to_csv())?,
        Scenario::Cil => write(&dir.join("R.csv"), o.r_cil.to_csv())?,
        Scenario::Both => {
            write(&dir.join("R_til.csv"), o.r_til.to_csv())?;
            write(&dir.join("R_cil.csv"), o.r_cil.to_csv())?;
        }
    }
    write(&dir.join("masks.csv"), metrics::masks_to_csv(&o.masks))?;
    for report in &o.reports {
        let t = report.mask.task_id;
        let mut csv = Vec::new();
        report.write_csv(&mut csv)?;
        write(&dir.join(format!("phi_task_{t}.csv")), csv)?;
        write(&dir.join(format!("estimate_task_{t}.json")), report.to_json()? + "\n")?;
    }
    for (snapshot, net) in o.snapshots.iter().zip(&o.checkpoints) {
        let file = SnapshotFile {
            snapshot: snapshot.clone(),
            checkpoint: net.to_checkpoint(),
        };
        write(
            &dir.join("snapshots").join(format!("task_{}.json", snapshot.task_id)),
            json(&file),
        )?;
    }
    write(&dir.join("model.json"), o.net.to_json()? + "\n")?;
    write(&dir.join("summary.json"), json(&out.summary))?;

    let timings: Vec<_> = out
        .tasks
        .iter()
        .zip(&o.timings)
        .map(|(t, tm)| {
            serde_json::json!({
                "task": t.task_id,
                "train_secs": tm.train_secs,
                "valuation_secs": tm.valuation_secs,
            })
        })
        .collect();
    let meta = serde_json::json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "workers": rayon::current_num_threads(),
        "task_timings": timings,
        "loss_traces": o.traces,
    });
    write(&dir.join("meta.json"), json(&meta))?;
    Ok(())
}

pub fn summary_line(s: &Summary) -> String {
    let bwt = s.bwt.map_or("n/a".to_string(), |b| format!("{b:.4}"));
    let cap = s.cap_pct.map_or("n/a".to_string(), |c| format!("{c:.2}%"));
    format!("ACC {:.4}  BWT {bwt}  CAP {cap}", s.acc)
}
