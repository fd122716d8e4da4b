//! Synthetic class-incremental task streams built from Gaussian blobs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, mix64, stream_rng};

/// Train/validation/test fractions.
pub const DEFAULT_SPLIT: [f64; 3] = [0.7, 0.1, 0.2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    /// Global class id.
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// 1-based position in the stream.
    pub task_id: usize,
    pub classes: Range<usize>,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl TaskSpec {
    pub fn inputs(split: &[Sample]) -> Vec<Vec<f64>> {
        split.iter().map(|s| s.x.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamConfig {
    pub n_tasks: usize,
    pub classes_per_task: usize,
    pub input_dim: usize,
    pub samples_per_class: usize,
    pub blob_spread: f64,
    pub class_separation: f64,
    #[serde(default)]
    pub seed: u64,
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tasks == 0
            || self.classes_per_task == 0
            || self.input_dim == 0
            || self.samples_per_class == 0
        {
            return Err(Error::Config("stream counts must be positive".into()));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return Err(Error::Config("class_separation must be positive".into()));
        }
        if !(self.blob_spread >= 0.0 && self.blob_spread.is_finite()) {
            return Err(Error::Config("blob_spread must be non-negative".into()));
        }
        Ok(())
    }

    pub fn total_classes(&self) -> usize {
        self.n_tasks * self.classes_per_task
    }
}

/// Class centers, one per global class, on the sphere of radius
/// `class_separation`.
pub fn class_centers(cfg: &StreamConfig) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(cfg.seed, "centers");
    (0..cfg.total_classes())
        .map(|_| loop {
            let v: Vec<f64> = (0..cfg.input_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|a| a / norm * cfg.class_separation).collect();
            }
        })
        .collect()
}

pub fn make_stream(cfg: &StreamConfig) -> Result<Vec<TaskSpec>> {
    cfg.validate()?;
    let centers = class_centers(cfg);
    let mut rng = stream_rng(cfg.seed, "samples");
    let mut tasks = Vec::with_capacity(cfg.n_tasks);
    for t in 0..cfg.n_tasks {
        let classes = t * cfg.classes_per_task..(t + 1) * cfg.classes_per_task;
        let mut data = Vec::with_capacity(cfg.classes_per_task * cfg.samples_per_class);
        for label in classes.clone() {
            for _ in 0..cfg.samples_per_class {
                let x = centers[label]
                    .iter()
                    .map(|c| c + cfg.blob_spread * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                data.push(Sample { x, label });
            }
        }
        let (train, val, test) = split(
            &data,
            DEFAULT_SPLIT,
            derive_seed(cfg.seed, &format!("split-{}", t + 1)),
        )?;
        tasks.push(TaskSpec {
            task_id: t + 1,
            classes,
            train,
            val,
            test,
        });
    }
    Ok(tasks)
}

fn sample_key(s: &Sample, seed: u64) -> u64 {
    let mut h = mix64(seed ^ s.label as u64);
    for v in &s.x {
        h = mix64(h ^ v.to_bits());
    }
    h
}

fn content_cmp(a: &Sample, b: &Sample) -> std::cmp::Ordering {
    a.label.cmp(&b.label).then_with(|| {
        a.x.iter()
            .map(|v| v.to_bits())
            .cmp(b.x.iter().map(|v| v.to_bits()))
    })
}

/// Stratified split into train/val/test.
///
/// Membership depends only on sample contents and `seed`, never on the
/// input order. Per class, counts are `round(f * n)` for train and val
/// with the remainder going to test.
pub fn split(
    data: &[Sample],
    fractions: [f64; 3],
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>, Vec<Sample>)> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::Precondition(format!(
            "split fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<&Sample>> = BTreeMap::new();
    for s in data {
        by_class.entry(s.label).or_default().push(s);
    }
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (label, mut members) in by_class {
        members.sort_by(|a, b| {
            sample_key(a, seed)
                .cmp(&sample_key(b, seed))
                .then_with(|| content_cmp(a, b))
        });
        let n = members.len();
        let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
        let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
        let n_test = n - n_train - n_val;
        if [n_train, n_val, n_test]
            .iter()
            .zip(&fractions)
            .any(|(&c, &f)| c == 0 && f > 0.0)
        {
            log::warn!("class {label}: {n} samples cannot fill every split {fractions:?}");
        }
        train.extend(members[..n_train].iter().map(|s| (*s).clone()));
        val.extend(members[n_train..n_train + n_val].iter().map(|s| (*s).clone()));
        test.extend(members[n_train + n_val..].iter().map(|s| (*s).clone()));
    }
    Ok((train, val, test))
}

const SPLITS: [&str; 3] = ["train", "val", "test"];

pub fn samples_to_csv(samples: &[Sample], dim: usize) -> String {
    let mut out = String::new();
    for j in 0..dim {
        let _ = write!(out, "x_{j},");
    }
    out.push_str("label\n");
    for s in samples {
        for v in &s.x {
            let _ = write!(out, "{v:?},");
        }
        let _ = writeln!(out, "{}", s.label);
    }
    out
}

/// Parses `x_0,..,x_{d-1},label` rows. Returns the samples and `d`.
pub fn parse_samples_csv(text: &str) -> Result<(Vec<Sample>, usize)> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing header".into(),
    })?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    let dim = cols.len() - 1;
    let header_ok = cols.last() == Some(&"label")
        && cols[..dim]
            .iter()
            .enumerate()
            .all(|(j, c)| *c == format!("x_{j}"));
    if !header_ok || dim == 0 {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header x_0,..,label; got `{header}`"),
        });
    }
    let mut samples = Vec::new();
    for (idx, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("{} fields, expected {}", fields.len(), dim + 1),
            });
        }
        let x = fields[..dim]
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line: idx + 1,
                        message: format!("bad feature `{f}`"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        let label = fields[dim].trim().parse::<usize>().map_err(|e| Error::Parse {
            line: idx + 1,
            message: format!("bad label `{}`: {e}", fields[dim]),
        })?;
        samples.push(Sample { x, label });
    }
    Ok((samples, dim))
}

/// Writes `t<k>_<split>.csv` for every task.
pub fn export_stream(tasks: &[TaskSpec], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for task in tasks {
        let dim = task
            .train
            .iter()
            .chain(&task.val)
            .chain(&task.test)
            .map(|s| s.x.len())
            .next()
            .unwrap_or(0);
        for (name, split) in SPLITS.iter().zip([&task.train, &task.val, &task.test]) {
            fs::write(
                dir.join(format!("t{}_{name}.csv", task.task_id)),
                samples_to_csv(split, dim),
            )?;
        }
    }
    Ok(())
}

/// Reads a directory written by [`export_stream`] (or prepared by hand).
/// Tasks are read from `t1` upward until one is missing; a task's class
/// range spans the labels found in its files.
pub fn import_stream(dir: &Path) -> Result<Vec<TaskSpec>> {
    let mut tasks = Vec::new();
    let mut dim: Option<usize> = None;
    for task_id in 1.. {
        if !dir.join(format!("t{task_id}_train.csv")).exists() {
            break;
        }
        let mut parts = Vec::with_capacity(3);
        for name in SPLITS {
            let path = dir.join(format!("t{task_id}_{name}.csv"));
            let text = fs::read_to_string(&path)
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            let (samples, d) = parse_samples_csv(&text)?;
            if *dim.get_or_insert(d) != d {
                return Err(Error::Data(format!("{} has {d} features", path.display())));
            }
            parts.push(samples);
        }
        let test = parts.pop().expect("three splits");
        let val = parts.pop().expect("three splits");
        let train = parts.pop().expect("three splits");
        let labels = train.iter().chain(&val).chain(&test).map(|s| s.label);
        let lo = labels.clone().min();
        let hi = labels.max();
        let (Some(lo), Some(hi)) = (lo, hi) else {
            return Err(Error::Data(format!("task {task_id} has no samples")));
        };
        tasks.push(TaskSpec {
            task_id,
            classes: lo..hi + 1,
            train,
            val,
            test,
        });
    }
    if tasks.is_empty() {
        return Err(Error::Data(format!("no t1_train.csv in {}", dir.display())));
    }
    Ok(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> StreamConfig {
        StreamConfig {
            n_tasks: 3,
            classes_per_task: 2,
            input_dim: 4,
            samples_per_class: 10,
            blob_spread: 0.5,
            class_separation: 5.0,
            seed: 42,
        }
    }

    #[test]
    fn deterministic_stream() {
        let a = make_stream(&cfg()).unwrap();
        let b = make_stream(&cfg()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert_eq!(a[1].classes, 2..4);
        assert!(a[1].train.iter().all(|s| a[1].classes.contains(&s.label)));
    }

    #[test]
    fn split_sizes_per_class() {
        let tasks = make_stream(&cfg()).unwrap();
        for t in &tasks {
            for c in t.classes.clone() {
                let count = |v: &[Sample]| v.iter().filter(|s| s.label == c).count();
                assert_eq!((count(&t.train), count(&t.val), count(&t.test)), (7, 1, 2));
            }
        }
    }

    #[test]
    fn split_is_order_independent() {
        let tasks = make_stream(&cfg()).unwrap();
        let mut data: Vec<Sample> = tasks[0]
            .train
            .iter()
            .chain(&tasks[0].val)
            .chain(&tasks[0].test)
            .cloned()
            .collect();
        let a = split(&data, DEFAULT_SPLIT, 9).unwrap();
        data.reverse();
        let b = split(&data, DEFAULT_SPLIT, 9).unwrap();
        assert_eq!(a, b);
        let (train, val, test) = split(&data, [1.0, 0.0, 0.0], 9).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (20, 0, 0));
        assert!(split(&data, [0.5, 0.1, 0.1], 9).is_err());
    }

    #[test]
    fn tiny_class_still_splits() {
        let data = vec![Sample { x: vec![1.0], label: 0 }];
        let (train, val, test) = split(&data, DEFAULT_SPLIT, 0).unwrap();
        assert_eq!(train.len() + val.len() + test.len(), 1);
    }

    #[test]
    fn csv_round_trip() {
        let tasks = make_stream(&cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_stream(&tasks, dir.path()).unwrap();
        assert!(dir.path().join("t3_test.csv").exists());
        assert_eq!(import_stream(dir.path()).unwrap(), tasks);
    }

    #[test]
    fn csv_parse_errors() {
        assert!(parse_samples_csv("").is_err());
        assert!(parse_samples_csv("a,b\n").is_err());
        assert!(parse_samples_csv("label\n1\n").is_err());
        assert!(matches!(
            parse_samples_csv("x_0,label\n1.0,2\n1.0\n"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(parse_samples_csv("x_0,label\nnan,2\n").is_err());
        assert!(parse_samples_csv("x_0,label\n1.0,-2\n").is_err());
        let (s, d) = parse_samples_csv("x_0,x_1,label\n1.0,2.5,3\n").unwrap();
        assert_eq!((d, s[0].label, s[0].x.clone()), (2, 3, vec![1.0, 2.5]));
    }

    #[test]
    fn invalid_config() {
        let mut c = cfg();
        c.class_separation = 0.0;
        assert!(make_stream(&c).is_err());
        let mut c = cfg();
        c.n_tasks = 0;
        assert!(make_stream(&c).is_err());
    }
}
