//! Continual-learning metrics: ACC, BWT, CAP, mask overlap and
//! Shapley-ranked pruning curves.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::continual::TaskMask;
use crate::error::{Error, Result};
use crate::game::Coalition;
use crate::network::{AblationSpec, DenseNet};
use crate::tasks::Sample;
use crate::valuation::top_k_mask;

/// `r[i][j]`: accuracy on task `j` after training task `i` (0-based).
/// Cells above the diagonal stay empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    n_tasks: usize,
    cells: Vec<Option<f64>>,
}

impl AccuracyMatrix {
    pub fn new(n_tasks: usize) -> Self {
        AccuracyMatrix {
            n_tasks,
            cells: vec![None; n_tasks * n_tasks],
        }
    }

    pub fn n_tasks(&self) -> usize {
        self.n_tasks
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        if i < self.n_tasks && j < self.n_tasks {
            self.cells[i * self.n_tasks + j]
        } else {
            None
        }
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) -> Result<()> {
        if i >= self.n_tasks || j > i {
            return Err(Error::Precondition(format!(
                "cell ({i}, {j}) outside the lower triangle of a {0}x{0} matrix",
                self.n_tasks
            )));
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Precondition(format!("accuracy {value} outside [0, 1]")));
        }
        self.cells[i * self.n_tasks + j] = Some(value);
        Ok(())
    }

    pub fn rows(&self) -> Vec<Vec<Option<f64>>> {
        self.cells.chunks(self.n_tasks.max(1)).map(<[_]>::to_vec).collect()
    }

    /// `after_task,task_1..task_T`; missing cells are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("after_task");
        for j in 1..=self.n_tasks {
            let _ = write!(out, ",task_{j}");
        }
        out.push('\n');
        for i in 0..self.n_tasks {
            let _ = write!(out, "{}", i + 1);
            for j in 0..self.n_tasks {
                match self.get(i, j) {
                    Some(v) => {
                        let _ = write!(out, ",{v:?}");
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let cols: Vec<&str> = header.trim().split(',').collect();
        let n = cols.len() - 1;
        let header_ok = cols[0] == "after_task"
            && cols[1..]
                .iter()
                .enumerate()
                .all(|(j, c)| *c == format!("task_{}", j + 1));
        if !header_ok || n == 0 {
            return Err(Error::Parse {
                line: 1,
                message: format!("bad header `{header}`"),
            });
        }
        let mut m = AccuracyMatrix::new(n);
        let mut rows = 0;
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let fields: Vec<&str> = line.trim().split(',').collect();
            if i >= n || fields.len() != n + 1 || fields[0] != (i + 1).to_string() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected row {} with {} cells", i + 1, n),
                });
            }
            for (j, f) in fields[1..].iter().enumerate() {
                let f = f.trim();
                if f.is_empty() || f.eq_ignore_ascii_case("nan") {
                    continue;
                }
                let v: f64 = f.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("bad accuracy `{f}`"),
                })?;
                m.set(i, j, v).map_err(|e| Error::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::Parse {
                line: rows + 2,
                message: format!("{rows} rows for {n} tasks"),
            });
        }
        Ok(m)
    }
}

/// Mean of the final row.
pub fn acc(r: &AccuracyMatrix) -> Result<f64> {
    let t = r.n_tasks();
    if t == 0 {
        return Err(Error::UndefinedMetric("ACC of an empty matrix".into()));
    }
    let mut sum = 0.0;
    for j in 0..t {
        sum += r
            .get(t - 1, j)
            .ok_or_else(|| Error::Precondition(format!("final row missing task {}", j + 1)))?;
    }
    Ok(sum / t as f64)
}

/// Mean change of each earlier task's accuracy from just after it was
/// learned to the end, as a fraction.
pub fn bwt(r: &AccuracyMatrix) -> Result<f64> {
    let t = r.n_tasks();
    if t < 2 {
        return Err(Error::UndefinedMetric("BWT with fewer than two tasks".into()));
    }
    let mut sum = 0.0;
    for j in 0..t - 1 {
        let missing = || Error::Precondition(format!("missing accuracy for task {}", j + 1));
        sum += r.get(t - 1, j).ok_or_else(missing)? - r.get(j, j).ok_or_else(missing)?;
    }
    Ok(sum / (t - 1) as f64)
}

/// Percentage of all parameters owned by the union of the task masks.
pub fn cap(masks: &[TaskMask], net: &DenseNet) -> Result<f64> {
    if masks.is_empty() {
        return Err(Error::Precondition("CAP needs at least one mask".into()));
    }
    let n = net.n_neurons();
    let mut union = vec![false; n];
    for m in masks {
        if m.len() != n {
            return Err(Error::Shape(format!("mask of {} for {n} neurons", m.len())));
        }
        for (u, &b) in union.iter_mut().zip(m.bits()) {
            *u |= b;
        }
    }
    let mut owned = 0;
    for (i, _) in union.iter().enumerate().filter(|(_, &b)| b) {
        owned += net.neuron_params(i)?.len();
    }
    Ok(100.0 * owned as f64 / net.params().len() as f64)
}

/// `|a ∩ b| / |a ∪ b|`.
pub fn jaccard(a: &TaskMask, b: &TaskMask) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("masks of {} and {}", a.len(), b.len())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    if union == 0 {
        return Err(Error::UndefinedMetric("Jaccard of two empty masks".into()));
    }
    Ok(inter as f64 / union as f64)
}

pub fn overlap_matrix(masks: &[TaskMask]) -> Result<Vec<Vec<f64>>> {
    masks
        .iter()
        .map(|a| masks.iter().map(|b| jaccard(a, b)).collect())
        .collect()
}

/// Number of lowest-valued neurons removed at fraction `f`.
pub fn pruned_count(fraction: f64, n: usize) -> usize {
    (((fraction * n as f64) + 1e-9).floor() as usize).min(n)
}

/// Accuracy over all classes as the lowest-valued neurons are mean-ablated.
///
/// At fraction `f` the kept set is the top `N - floor(f N)` neurons, i.e.
/// exactly the complement of what [`top_k_mask`] would discard.
pub fn pruning_curve(
    net: &DenseNet,
    phi: &[f64],
    eval_data: &[Sample],
    means: &[f64],
    fractions: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let n = net.n_neurons();
    if phi.len() != n || means.len() != n {
        return Err(Error::Shape(format!(
            "{} values and {} means for {n} neurons",
            phi.len(),
            means.len()
        )));
    }
    if fractions.windows(2).any(|w| w[0] > w[1])
        || fractions.iter().any(|f| !(0.0..=1.0).contains(f))
    {
        return Err(Error::Precondition(
            "pruning fractions must be ascending within [0, 1]".into(),
        ));
    }
    fractions
        .iter()
        .map(|&f| {
            let keep_n = n - pruned_count(f, n);
            let keep = if keep_n == 0 {
                Coalition::empty(n)
            } else {
                top_k_mask(phi, keep_n)?.to_coalition()
            };
            let ablation = AblationSpec::new(keep, means.to_vec());
            Ok((f, net.accuracy(eval_data, Some(&ablation), None)?))
        })
        .collect()
}

pub fn masks_to_csv(masks: &[TaskMask]) -> String {
    let n = masks.first().map_or(0, TaskMask::len);
    let mut out = String::from("task");
    for i in 0..n {
        let _ = write!(out, ",neuron_{i}");
    }
    out.push('\n');
    for m in masks {
        let _ = write!(out, "{}", m.task_id);
        for &b in m.bits() {
            let _ = write!(out, ",{}", u8::from(b));
        }
        out.push('\n');
    }
    out
}

pub fn parse_masks_csv(text: &str) -> Result<Vec<TaskMask>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing header".into(),
    })?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    let n = cols.len() - 1;
    if cols[0] != "task"
        || !cols[1..]
            .iter()
            .enumerate()
            .all(|(i, c)| *c == format!("neuron_{i}"))
    {
        return Err(Error::Parse {
            line: 1,
            message: format!("bad header `{header}`"),
        });
    }
    let mut masks = Vec::new();
    for (idx, line) in lines {
        let parse_err = |message: String| Error::Parse {
            line: idx + 1,
            message,
        };
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != n + 1 {
            return Err(parse_err(format!("{} fields, expected {}", fields.len(), n + 1)));
        }
        let task_id = fields[0]
            .parse()
            .map_err(|_| parse_err(format!("bad task id `{}`", fields[0])))?;
        let bits = fields[1..]
            .iter()
            .map(|f| match *f {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(parse_err(format!("mask entry `{other}` is not 0/1"))),
            })
            .collect::<Result<Vec<bool>>>()?;
        masks.push(TaskMask::new(task_id, bits));
    }
    Ok(masks)
}
