//! `exact`: exact Shapley values of a tabulated game, optionally side by
//! side with the sampling estimator.

use std::fmt::Write as _;
use std::path::Path;

use snv_core::game::{exact_shapley, ShapleyVector, TableGame};
use snv_core::valuation::{estimate_snv, EstimateReport, EstimatorConfig};

use crate::error::{read, CliError, CliResult};

#[derive(Debug, Clone)]
pub struct CompareOptions {
    pub max_permutations: usize,
    pub confidence: f64,
    pub truncation_threshold: Option<f64>,
    pub capacity_ratio: f64,
    pub racing: bool,
    pub seed: u64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            max_permutations: 20_000,
            confidence: 0.95,
            truncation_threshold: None,
            capacity_ratio: 1.0,
            racing: false,
            seed: 0,
        }
    }
}

pub struct ExactOutput {
    pub exact: ShapleyVector,
    pub estimate: Option<EstimateReport>,
}

impl ExactOutput {
    /// Players whose estimate lies within its printed half-width.
    pub fn within_ci(&self) -> Option<Vec<bool>> {
        let est = self.estimate.as_ref()?;
        let hw = est.half_widths();
        Some(
            self.exact
                .phi
                .iter()
                .zip(&est.phi_hat)
                .zip(&hw)
                .map(|((p, q), h)| (p - q).abs() <= *h)
                .collect(),
        )
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let e = &self.exact;
        let _ = writeln!(
            out,
            "# players {}  v(empty) {}  v(full) {}  sum(phi) {}",
            e.phi.len(),
            e.baseline,
            e.grand,
            e.total()
        );
        match &self.estimate {
            None => {
                let _ = writeln!(out, "player\tphi");
                for (i, p) in e.phi.iter().enumerate() {
                    let _ = writeln!(out, "{i}\t{p:.4}");
                }
            }
            Some(est) => {
                let hw = est.half_widths();
                let inside = self.within_ci().unwrap_or_default();
                let _ = writeln!(out, "player\tphi\tphi_hat\tabs_err\tci_half_width\tn\twithin");
                for (i, p) in e.phi.iter().enumerate() {
                    let _ = writeln!(
                        out,
                        "{i}\t{p:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}",
                        est.phi_hat[i],
                        (p - est.phi_hat[i]).abs(),
                        hw[i],
                        est.counts[i],
                        inside[i]
                    );
                }
                let _ = writeln!(
                    out,
                    "# within CI {}/{}  permutations {}  converged {}",
                    inside.iter().filter(|&&b| b).count(),
                    inside.len(),
                    est.permutations_used,
                    est.converged
                );
            }
        }
        out
    }
}

pub fn execute(game_path: &Path, compare: Option<&CompareOptions>) -> CliResult<ExactOutput> {
    let game = TableGame::parse(&read(game_path)?)?;
    let exact = exact_shapley(&game)?;
    let estimate = match compare {
        None => None,
        Some(o) => {
            let cfg = EstimatorConfig {
                capacity_ratio: o.capacity_ratio,
                truncation_threshold: o.truncation_threshold,
                confidence: o.confidence,
                max_permutations: o.max_permutations,
                racing: o.racing,
                seed: o.seed,
                ..EstimatorConfig::default()
            };
            cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
            Some(estimate_snv(&game, &cfg)?)
        }
    };
    Ok(ExactOutput { exact, estimate })
}
