//! Sampling estimator for Shapley neuron values with top-k racing.
//!
//! Each pass draws a uniform permutation and walks it, growing a coalition
//! one player at a time. Marginals are recorded only for players still in
//! the racing set and only while the coalition scores above the truncation
//! floor. After each round the racing set is narrowed to the players whose
//! confidence interval still covers the current k-th largest estimate.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::continual::TaskMask;
use crate::error::{Error, Result};
use crate::game::{Coalition, CooperativeGame};
use crate::seed::indexed_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Fraction `c` of neurons kept per task; `k = floor(c * N)`.
    pub capacity_ratio: f64,
    /// Performance floor `tau`. `None` disables truncation.
    pub truncation_threshold: Option<f64>,
    /// Two-sided confidence level `alpha` of the racing intervals.
    pub confidence: f64,
    /// Samples required before a player's interval is trusted.
    #[serde(default = "default_min_samples")]
    pub min_samples: usize,
    #[serde(default = "default_max_permutations")]
    pub max_permutations: usize,
    /// Permutation passes per racing round. Passes in a round may run in
    /// parallel; results depend on this value but not on the worker count.
    #[serde(default = "default_passes_per_round")]
    pub passes_per_round: usize,
    /// When false every player is sampled on every pass until the budget
    /// is spent.
    #[serde(default = "default_racing")]
    pub racing: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_min_samples() -> usize {
    5
}
fn default_max_permutations() -> usize {
    10_000
}
fn default_passes_per_round() -> usize {
    1
}
fn default_racing() -> bool {
    true
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            capacity_ratio: 0.1,
            truncation_threshold: Some(0.05),
            confidence: 0.95,
            min_samples: default_min_samples(),
            max_permutations: default_max_permutations(),
            passes_per_round: default_passes_per_round(),
            racing: default_racing(),
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.capacity_ratio > 0.0 && self.capacity_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "capacity_ratio {} outside (0, 1]",
                self.capacity_ratio
            )));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Config(format!(
                "confidence {} outside (0, 1)",
                self.confidence
            )));
        }
        if let Some(t) = self.truncation_threshold {
            if t.is_nan() {
                return Err(Error::Config("truncation_threshold is NaN".into()));
            }
        }
        if self.min_samples < 2 {
            return Err(Error::Config("min_samples must be at least 2".into()));
        }
        if self.max_permutations == 0 {
            return Err(Error::Config("max_permutations must be positive".into()));
        }
        if self.passes_per_round == 0 {
            return Err(Error::Config("passes_per_round must be positive".into()));
        }
        Ok(())
    }

    /// `floor(c * n)`; the tiny offset absorbs products like `0.29 * 100`.
    pub fn budget(&self, n: usize) -> usize {
        ((self.capacity_ratio * n as f64) + 1e-9).floor() as usize
    }
}

/// Two-sided standard-normal critical value: `z` with `Phi(z) = 1 - (1-alpha)/2`.
pub fn z_critical(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Precondition(format!("alpha {alpha} outside (0, 1)")));
    }
    Ok(inverse_normal_cdf(1.0 - (1.0 - alpha) / 2.0))
}

/// Acklam's rational approximation of the standard-normal quantile
/// (relative error below 1.2e-9 on (0, 1)).
#[allow(clippy::excessive_precision)]
fn inverse_normal_cdf(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    }
}

/// Per-player running mean and sum of squared deviations (Welford).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyAccumulator {
    mean: Vec<f64>,
    m2: Vec<f64>,
    count: Vec<u64>,
}

impl ShapleyAccumulator {
    pub fn new(n_players: usize) -> Self {
        ShapleyAccumulator {
            mean: vec![0.0; n_players],
            m2: vec![0.0; n_players],
            count: vec![0; n_players],
        }
    }

    pub fn n_players(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, i: usize, delta: f64) {
        self.count[i] += 1;
        let d = delta - self.mean[i];
        self.mean[i] += d / self.count[i] as f64;
        self.m2[i] += d * (delta - self.mean[i]);
    }

    /// Chan et al. pairwise combination, player by player.
    pub fn merge(&mut self, other: &ShapleyAccumulator) {
        assert_eq!(self.n_players(), other.n_players());
        for i in 0..self.n_players() {
            let nb = other.count[i];
            if nb == 0 {
                continue;
            }
            let na = self.count[i];
            if na == 0 {
                self.mean[i] = other.mean[i];
                self.m2[i] = other.m2[i];
                self.count[i] = nb;
                continue;
            }
            let n = na + nb;
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * (nb as f64 / n as f64);
            self.m2[i] += other.m2[i] + d * d * (na as f64 * nb as f64 / n as f64);
            self.count[i] = n;
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn m2(&self) -> &[f64] {
        &self.m2
    }

    pub fn counts(&self) -> &[u64] {
        &self.count
    }

    /// Unbiased sample variance; `None` below two samples.
    pub fn variance(&self, i: usize) -> Option<f64> {
        (self.count[i] >= 2).then(|| self.m2[i] / (self.count[i] - 1) as f64)
    }

    pub fn std_dev(&self, i: usize) -> Option<f64> {
        self.variance(i).map(f64::sqrt)
    }

    /// `z * sigma_i / sqrt(n_i)`, infinite until `min_samples` are in.
    pub fn half_width(&self, i: usize, z: f64, min_samples: usize) -> f64 {
        match self.std_dev(i) {
            Some(sd) if self.count[i] as usize >= min_samples => {
                z * sd / (self.count[i] as f64).sqrt()
            }
            _ => f64::INFINITY,
        }
    }
}

/// One permutation pass. Returns the number of active players skipped
/// because the coalition preceding them scored at or below `tau`.
pub fn sample_permutation_pass<G, R>(
    game: &G,
    acc: &mut ShapleyAccumulator,
    active: &[bool],
    tau: Option<f64>,
    rng: &mut R,
) -> Result<usize>
where
    G: CooperativeGame + ?Sized,
    R: Rng + ?Sized,
{
    let n = game.n_players();
    if active.len() != n || acc.n_players() != n {
        return Err(Error::Shape(format!(
            "active set of {} / accumulator of {} for {n} players",
            active.len(),
            acc.n_players()
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let mut coalition = Coalition::empty(n);
    // Value of the current coalition, when already known.
    let mut current: Option<f64> = None;
    let mut skips = 0;
    for &i in &order {
        if active[i] {
            let v = match current {
                Some(v) => v,
                None => game.value(&coalition)?,
            };
            if tau.is_none_or(|t| v > t) {
                coalition.insert(i);
                let next = game.value(&coalition)?;
                acc.update(i, next - v);
                current = Some(next);
                continue;
            }
            skips += 1;
        }
        coalition.insert(i);
        current = None;
    }
    Ok(skips)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub phi_hat: Vec<f64>,
    pub counts: Vec<u64>,
    /// Sample standard deviation per player; `None` below two samples.
    pub sigma: Vec<Option<f64>>,
    pub mask: TaskMask,
    pub permutations_used: usize,
    pub truncated_skips: usize,
    pub converged: bool,
    pub seed: u64,
    pub config: EstimatorConfig,
}

impl EstimateReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Confidence half-width per player at the configured level.
    pub fn half_widths(&self) -> Vec<f64> {
        let z = z_critical(self.config.confidence).unwrap_or(f64::NAN);
        self.sigma
            .iter()
            .zip(&self.counts)
            .map(|(s, &n)| match s {
                Some(sd) => z * sd / (n as f64).sqrt(),
                None => f64::INFINITY,
            })
            .collect()
    }

    /// `neuron_index,phi_hat,n,sigma,selected` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "neuron_index,phi_hat,n,sigma,selected")?;
        for i in 0..self.phi_hat.len() {
            let sigma = self.sigma[i].map(|s| format!("{s:?}")).unwrap_or_default();
            writeln!(
                w,
                "{i},{:?},{},{sigma},{}",
                self.phi_hat[i],
                self.counts[i],
                u8::from(self.mask.bits()[i])
            )?;
        }
        Ok(())
    }
}

/// One row of the per-neuron CSV export.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiRow {
    pub neuron_index: usize,
    pub phi_hat: f64,
    pub n: u64,
    pub sigma: Option<f64>,
    pub selected: bool,
}

/// Reads the output of [`EstimateReport::write_csv`]. Rows must be in
/// neuron order starting at 0.
pub fn parse_phi_csv(text: &str) -> Result<Vec<PhiRow>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == "neuron_index,phi_hat,n,sigma,selected" => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "expected header neuron_index,phi_hat,n,sigma,selected".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let err = |message: String| Error::Parse {
            line: idx + 1,
            message,
        };
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 5 {
            return Err(err(format!("{} fields, expected 5", f.len())));
        }
        let neuron_index: usize = f[0].parse().map_err(|_| err(format!("bad index `{}`", f[0])))?;
        if neuron_index != rows.len() {
            return Err(err(format!("expected neuron {}, got {neuron_index}", rows.len())));
        }
        let phi_hat: f64 = f[1]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| err(format!("bad phi `{}`", f[1])))?;
        let n: u64 = f[2].parse().map_err(|_| err(format!("bad count `{}`", f[2])))?;
        let sigma = if f[3].is_empty() {
            None
        } else {
            Some(
                f[3].parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite() && *v >= 0.0)
                    .ok_or_else(|| err(format!("bad sigma `{}`", f[3])))?,
            )
        };
        let selected = match f[4] {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("selected `{other}` is not 0/1"))),
        };
        rows.push(PhiRow {
            neuron_index,
            phi_hat,
            n,
            sigma,
            selected,
        });
    }
    Ok(rows)
}

/// Players whose interval still covers the k-th largest estimate.
fn racing_set(acc: &ShapleyAccumulator, k: usize, z: f64, min_samples: usize) -> Vec<bool> {
    let mut sorted = acc.mean().to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let kth = sorted[k - 1];
    (0..acc.n_players())
        .map(|i| (acc.mean()[i] - kth).abs() < acc.half_width(i, z, min_samples))
        .collect()
}

/// Estimates Shapley values with truncation and racing, then selects the
/// top `floor(c * N)` players.
pub fn estimate_snv<G>(game: &G, cfg: &EstimatorConfig) -> Result<EstimateReport>
where
    G: CooperativeGame + ?Sized,
{
    cfg.validate()?;
    let n = game.n_players();
    if n < 2 {
        return Err(Error::Precondition(format!("need at least 2 players, got {n}")));
    }
    let k = cfg.budget(n);
    if k == 0 {
        return Err(Error::Config(format!(
            "capacity_ratio {} selects no neurons out of {n}",
            cfg.capacity_ratio
        )));
    }
    let z = z_critical(cfg.confidence)?;

    let mut acc = ShapleyAccumulator::new(n);
    let mut active = vec![true; n];
    let mut used = 0usize;
    let mut skips = 0usize;
    let mut converged = false;

    while used < cfg.max_permutations {
        let round = cfg.passes_per_round.min(cfg.max_permutations - used);
        let passes: Vec<Result<(ShapleyAccumulator, usize)>> = (used..used + round)
            .into_par_iter()
            .map(|p| {
                let mut rng = indexed_rng(cfg.seed, p as u64);
                let mut local = ShapleyAccumulator::new(n);
                let s = sample_permutation_pass(
                    game,
                    &mut local,
                    &active,
                    cfg.truncation_threshold,
                    &mut rng,
                )?;
                Ok((local, s))
            })
            .collect();
        for pass in passes {
            let (local, s) = pass?;
            acc.merge(&local);
            skips += s;
        }
        used += round;

        if cfg.racing {
            active = racing_set(&acc, k, z, cfg.min_samples);
            if active.iter().all(|a| !a) {
                converged = true;
                break;
            }
        }
    }

    let mask = top_k_mask(acc.mean(), k)?;
    Ok(EstimateReport {
        phi_hat: acc.mean().to_vec(),
        counts: acc.counts().to_vec(),
        sigma: (0..n).map(|i| acc.std_dev(i)).collect(),
        mask,
        permutations_used: used,
        truncated_skips: skips,
        converged,
        seed: cfg.seed,
        config: cfg.clone(),
    })
}

/// Indices sorted by value, descending; ties go to the lower index.
pub fn ranking(phi: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..phi.len()).collect();
    idx.sort_by(|&a, &b| phi[b].total_cmp(&phi[a]).then(a.cmp(&b)));
    idx
}

/// Mask with ones at the `k` largest values.
pub fn top_k_mask(phi: &[f64], k: usize) -> Result<TaskMask> {
    if k == 0 || k > phi.len() {
        return Err(Error::Precondition(format!(
            "k = {k} outside 1..={}",
            phi.len()
        )));
    }
    let mut bits = vec![false; phi.len()];
    for &i in ranking(phi).iter().take(k) {
        bits[i] = true;
    }
    Ok(TaskMask::new(0, bits))
}
