//! `analyze`: derived reports from a finished artifact directory.

use std::fmt::Write as _;
use std::path::Path;

use snv_core::metrics::{overlap_matrix, parse_masks_csv};
use snv_core::network::DenseNet;
use snv_core::valuation::parse_phi_csv;

use crate::config::ExperimentConfig;
use crate::error::{read, write, CliError, CliResult};
use crate::run::{load_stream, run_pruning_curve};

pub struct Analysis {
    pub pruning_curve: Vec<(f64, f64)>,
    /// One row per task, one column per neuron.
    pub heatmap: Vec<Vec<f64>>,
    pub overlap: Vec<Vec<f64>>,
    /// `(layer, unit)` of each neuron column.
    pub neurons: Vec<(usize, usize)>,
}

fn data_err(path: &Path) -> impl FnOnce(snv_core::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

pub fn execute(dir: &Path) -> CliResult<Analysis> {
    let echo = dir.join("config.echo.json");
    let model = dir.join("model.json");
    let masks = dir.join("masks.csv");
    let mut missing: Vec<String> = [&echo, &model, &masks]
        .iter()
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Data(format!(
            "incomplete artifact directory, missing: {}",
            missing.join(", ")
        )));
    }

    let cfg = ExperimentConfig::from_json(&read(&echo)?)
        .map_err(|e| CliError::Config(format!("{}: {e}", echo.display())))?;
    let net = DenseNet::from_json(&read(&model)?).map_err(data_err(&model))?;
    let masks = parse_masks_csv(&read(&masks)?).map_err(data_err(&masks))?;
    let n_tasks = masks.len();
    if n_tasks == 0 {
        return Err(CliError::Data(
            "masks.csv lists no tasks; nothing to analyze".into(),
        ));
    }

    let phi_paths: Vec<_> = masks
        .iter()
        .map(|m| dir.join(format!("phi_task_{}.csv", m.task_id)))
        .collect();
    missing.extend(phi_paths.iter().filter(|p| !p.is_file()).map(|p| p.display().to_string()));
    if !missing.is_empty() {
        return Err(CliError::Data(format!(
            "incomplete artifact directory, missing: {}",
            missing.join(", ")
        )));
    }
    let mut heatmap = Vec::with_capacity(n_tasks);
    for p in &phi_paths {
        let rows = parse_phi_csv(&read(p)?).map_err(data_err(p))?;
        if rows.len() != net.n_neurons() {
            return Err(CliError::Data(format!(
                "{}: {} rows for {} neurons",
                p.display(),
                rows.len(),
                net.n_neurons()
            )));
        }
        heatmap.push(rows.into_iter().map(|r| r.phi_hat).collect());
    }

    let tasks = load_stream(&cfg)?;
    let pruning_curve = run_pruning_curve(&net, &tasks, &heatmap, &cfg.analysis.pruning_fractions)?
        .unwrap_or_default();
    let neurons = (0..net.n_neurons())
        .map(|i| net.neuron_id(i).map(|id| (id.layer, id.unit)))
        .collect::<Result<_, _>>()?;
    Ok(Analysis {
        pruning_curve,
        heatmap,
        overlap: overlap_matrix(&masks)?,
        neurons,
    })
}

impl Analysis {
    pub fn pruning_csv(&self) -> String {
        let mut out = String::from("fraction,accuracy\n");
        for (f, a) in &self.pruning_curve {
            let _ = writeln!(out, "{f:?},{a:?}");
        }
        out
    }

    /// Columns are named `l<layer>_u<unit>`; layer 0 is the first hidden
    /// layer.
    pub fn heatmap_csv(&self) -> String {
        let mut out = String::from("task");
        for (l, u) in &self.neurons {
            let _ = write!(out, ",l{l}_u{u}");
        }
        out.push('\n');
        for (t, row) in self.heatmap.iter().enumerate() {
            let _ = write!(out, "{}", t + 1);
            for v in row {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn overlap_csv(&self) -> String {
        let mut out = String::from("task");
        for t in 1..=self.overlap.len() {
            let _ = write!(out, ",task_{t}");
        }
        out.push('\n');
        for (t, row) in self.overlap.iter().enumerate() {
            let _ = write!(out, "{}", t + 1);
            for v in row {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        write(&dir.join("pruning_curve.csv"), self.pruning_csv())?;
        write(&dir.join("shapley_heatmap.csv"), self.heatmap_csv())?;
        write(&dir.join("overlap.csv"), self.overlap_csv())?;
        Ok(())
    }
}
