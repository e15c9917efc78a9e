use std::fmt::Write;

use hdiv::clime::default_mu;
use hdiv::overid::{TestConfig, TestReport};
use hdiv::sim::ExperimentOutput;
use serde::{Deserialize, Serialize};

use crate::RunConfig;

/// Conventions that affect the numbers in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decisions {
    pub critical_value: String,
    pub p_value: String,
    pub q_statistic_log: String,
    pub n_draws: usize,
    pub lasso_selection: String,
    pub clime_mu: f64,
    pub c_omega: f64,
    pub standardization: String,
}

impl Decisions {
    pub fn new(config: &TestConfig, n: usize, p: usize, standardized: bool) -> Self {
        Self {
            critical_value: "empirical (1 - alpha) quantile of max_j |eta_j| over multiplier draws \
                             eta = n^{-1/2} sum_i L_i w_i, no extra sqrt(n) factor"
                .into(),
            p_value: "(1 + #{draws >= statistic}) / (draws + 1)".into(),
            q_statistic_log: "natural".into(),
            n_draws: config.n_draws,
            lasso_selection: format!(
                "{}-fold cross-validation over {} lambdas, one-standard-error rule",
                config.lasso.folds, config.lasso.n_lambdas
            ),
            clime_mu: default_mu(n, p, config.c_omega),
            c_omega: config.c_omega,
            standardization: if standardized {
                "all columns centered and scaled to unit sample sd".into()
            } else {
                "none".into()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub decisions: Decisions,
    pub n: usize,
    pub p_x: usize,
    pub p_z: usize,
    pub report: TestReport,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationDocument {
    pub version: String,
    pub command: String,
    pub output: ExperimentOutput,
    pub seconds: f64,
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// Plain-text summary with one row per tested instrument set.
pub fn render_summary(doc: &ReportDocument) -> String {
    let r = &doc.report;
    let mut out = String::new();
    let _ = writeln!(out, "hdiv {} overidentification test", doc.version);
    let _ = writeln!(
        out,
        "n = {}, covariates = {}, instruments = {}, alpha = {}, draws = {}, seed = {}",
        doc.n, doc.p_x, doc.p_z, r.alpha, r.n_draws, r.seed
    );
    let b = &r.beta;
    match b.ci {
        Some((lo, hi)) => {
            let _ = writeln!(
                out,
                "beta_hat = {:.4}  ({:.0}% CI {:.4} to {:.4})",
                b.beta_hat,
                100.0 * b.level,
                lo,
                hi
            );
        }
        None => {
            let _ = writeln!(
                out,
                "beta_hat = {:.4}  (weak instruments, no interval)",
                b.beta_hat
            );
        }
    }
    let set = match doc.config.columns.instruments.as_slice() {
        [] => String::new(),
        [one] => one.clone(),
        [first, .., last] if doc.config.columns.instruments.len() > 3 => format!("{first}..{last}"),
        all => all.join(","),
    };
    let width = set.len().max(14);
    let _ = writeln!(
        out,
        "{:<width$}  {:>8}  {:>8}  {:>8}  {:>7}  {:>7}  {:>8}  {:>9}",
        "instruments", "M", "Q", "cv", "p(M)", "p(PM)", "reject M", "reject PM"
    );
    let _ = writeln!(
        out,
        "{:<width$}  {:>8.3}  {:>8.3}  {:>8.3}  {:>7.3}  {:>7.3}  {:>8}  {:>9}",
        set,
        r.m_stat,
        r.q_stat,
        r.cv,
        r.p_value_m,
        r.p_value_pm,
        yes_no(r.reject_m),
        yes_no(r.reject_pm)
    );
    let _ = writeln!(
        out,
        "Q_A(gamma) = {:.4}, relatedness = {:.3}, CLIME mu = {:.4}",
        r.diagnostics.q_hat_gamma, r.diagnostics.relatedness, r.diagnostics.clime_mu
    );
    out
}
