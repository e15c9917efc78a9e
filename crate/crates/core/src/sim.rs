//! Monte Carlo harness: the simulation design with AR(1)-correlated
//! regressors, and seeded size, power and estimation experiments.

use std::io::Write;

use ndarray::{s, Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clime::{clime, default_mu};
use crate::data::Dataset;
use crate::error::{HdivError, Result};
use crate::iq::{estimate_beta, fit_reduced_forms, BetaEstimate};
use crate::lasso::LassoConfig;
use crate::overid::{run_overid_test, TestConfig, TestReport};
use crate::rng::{derive_seed, stream};

/// Correlation between adjacent regressors.
pub const AR_COEF: f64 = 0.5;
/// Number of nonzero entries in `phi` and `psi`.
pub const S_PHI: usize = 10;
/// Number of relevant instruments.
pub const S_GAMMA: usize = 7;

const DGP_STREAM: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaVariant {
    /// Seven unit coefficients.
    G1,
    /// `0.8^k` decay over the first seven instruments.
    G2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PiVariant {
    Null,
    /// A single violation of size `rho` on the first instrument.
    P1,
    /// Many small violations, scaled by `rho`.
    P2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Size,
    Power,
    Beta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub p_x: usize,
    pub p_z: usize,
    pub gamma: GammaVariant,
    pub pi: PiVariant,
    /// Violation size for `p1`, multiplier for `p2`; ignored for `null`.
    pub rho: f64,
    pub hetero: bool,
    pub beta: f64,
    pub replications: usize,
    pub seed: u64,
    pub alpha: f64,
    pub n_draws: usize,
    pub c_omega: f64,
    pub lasso: LassoConfig,
    pub experiment: Experiment,
    /// Grid of `rho` values for power curves.
    pub rho_grid: Vec<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 150,
            p_x: 50,
            p_z: 10,
            gamma: GammaVariant::G1,
            pi: PiVariant::Null,
            rho: 1.0,
            hetero: false,
            beta: 1.0,
            replications: 500,
            seed: 1,
            alpha: 0.05,
            n_draws: 2000,
            c_omega: 0.6,
            lasso: LassoConfig::default(),
            experiment: Experiment::Size,
            rho_grid: Vec::new(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p_x == 0 || self.p_z < 2 {
            return Err(HdivError::Config(format!(
                "need n >= 2, p_x >= 1 and p_z >= 2, got ({}, {}, {})",
                self.n, self.p_x, self.p_z
            )));
        }
        if self.replications == 0 {
            return Err(HdivError::Config("replications must be at least 1".into()));
        }
        if !self.rho.is_finite() || !self.beta.is_finite() {
            return Err(HdivError::Config("rho and beta must be finite".into()));
        }
        if self.pi == PiVariant::P2 && !matches!(self.p_z, 10 | 100) {
            return Err(HdivError::Config(format!(
                "the p2 invalidity pattern is defined only for p_z in {{10, 100}}, got {}",
                self.p_z
            )));
        }
        if self.experiment == Experiment::Power && self.rho_grid.is_empty() {
            return Err(HdivError::Config(
                "power experiment needs a nonempty rho_grid".into(),
            ));
        }
        if self.rho_grid.iter().any(|r| !r.is_finite()) {
            return Err(HdivError::Config("rho_grid values must be finite".into()));
        }
        self.test_config(0).validate()
    }

    pub fn a0(&self) -> f64 {
        if self.hetero {
            2f64.powf(-0.25)
        } else {
            0.0
        }
    }

    pub fn phi(&self) -> Array1<f64> {
        decay(self.p_x, S_PHI, 0.5)
    }

    pub fn psi(&self) -> Array1<f64> {
        decay(self.p_x, S_PHI, 0.6)
    }

    pub fn gamma_vec(&self) -> Array1<f64> {
        match self.gamma {
            GammaVariant::G1 => Array1::from_shape_fn(self.p_z, |k| if k < S_GAMMA { 1.0 } else { 0.0 }),
            GammaVariant::G2 => decay(self.p_z, S_GAMMA, 0.8),
        }
    }

    pub fn pi_vec(&self) -> Result<Array1<f64>> {
        let mut pi = Array1::zeros(self.p_z);
        match self.pi {
            PiVariant::Null => {}
            PiVariant::P1 => pi[0] = self.rho,
            PiVariant::P2 => match self.p_z {
                10 => {
                    for k in 0..4 {
                        pi[k] = if k % 2 == 0 { 0.5 } else { -0.5 } * self.rho;
                    }
                }
                100 => pi.slice_mut(s![..30]).fill(0.1 * self.rho),
                other => {
                    return Err(HdivError::Config(format!(
                        "the p2 invalidity pattern is defined only for p_z in {{10, 100}}, got {other}"
                    )))
                }
            },
        }
        Ok(pi)
    }

    pub fn test_config(&self, seed: u64) -> TestConfig {
        TestConfig {
            alpha: self.alpha,
            n_draws: self.n_draws,
            seed,
            c_omega: self.c_omega,
            lasso: self.lasso,
        }
    }

    fn with_rho(&self, rho: f64) -> Self {
        Self { rho, ..self.clone() }
    }
}

fn decay(len: usize, support: usize, base: f64) -> Array1<f64> {
    Array1::from_shape_fn(len, |k| if k < support { base.powi(k as i32) } else { 0.0 })
}

/// Seed for replication `rep` under master seed `master`.
pub fn replication_seed(master: u64, rep: usize) -> u64 {
    derive_seed(master, rep as u64)
}

/// Draws one dataset. Rows of `W` follow a stationary AR(1) across columns,
/// which has exactly the `0.5^|j-k|` covariance.
pub fn generate_dgp(config: &SimConfig, rep_seed: u64) -> Result<Dataset> {
    config.validate()?;
    let (n, p_x, p_z) = (config.n, config.p_x, config.p_z);
    let p = p_x + p_z;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rep_seed, DGP_STREAM));
    let innov = (1.0 - AR_COEF * AR_COEF).sqrt();
    let mut w = Array2::<f64>::zeros((n, p));
    for mut row in w.rows_mut() {
        let mut prev: f64 = StandardNormal.sample(&mut rng);
        row[0] = prev;
        for k in 1..p {
            let z: f64 = StandardNormal.sample(&mut rng);
            prev = AR_COEF * prev + innov * z;
            row[k] = prev;
        }
    }
    let x = w.slice(s![.., ..p_x]).to_owned();
    let z = w.slice(s![.., p_x..]).to_owned();

    let a0 = config.a0();
    let mut e = Array1::<f64>::zeros(n);
    let mut eps2 = Array1::<f64>::zeros(n);
    for i in 0..n {
        let e0: f64 = StandardNormal.sample(&mut rng);
        let e1: f64 = StandardNormal.sample(&mut rng);
        let v0: f64 = StandardNormal.sample(&mut rng);
        e[i] = a0 * z[[i, 0]] * e1 + (1.0 - a0 * a0).sqrt() * e0;
        eps2[i] = 0.5 * e[i] + 0.75f64.sqrt() * v0;
    }
    let d = x.dot(&config.psi()) + z.dot(&config.gamma_vec()) + eps2;
    let y = &d * config.beta + x.dot(&config.phi()) + z.dot(&config.pi_vec()?) + e;
    Dataset::new(y, d, x, z)
}

/// Runs `f` on a pool capped by `HDIV_THREADS`, if set.
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match std::env::var("HDIV_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        Some(k) if k > 0 => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        _ => f(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub rate: f64,
    pub se: f64,
}

impl Rate {
    pub fn from_counts(hits: usize, total: usize) -> Self {
        if total == 0 {
            return Self {
                rate: f64::NAN,
                se: f64::NAN,
            };
        }
        let r = hits as f64 / total as f64;
        Self {
            rate: r,
            se: (r * (1.0 - r) / total as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FailureCounts {
    pub weak_instruments: usize,
    pub other: usize,
    /// First few error messages, for diagnosis.
    pub messages: Vec<String>,
}

impl FailureCounts {
    fn record(&mut self, err: &HdivError) {
        match err {
            HdivError::WeakInstruments { .. } => self.weak_instruments += 1,
            _ => self.other += 1,
        }
        if self.messages.len() < 5 {
            self.messages.push(err.to_string());
        }
    }

    pub fn total(&self) -> usize {
        self.weak_instruments + self.other
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeTable {
    pub config: SimConfig,
    pub completed: usize,
    pub failures: FailureCounts,
    pub m: Rate,
    pub q: Rate,
    pub pm: Rate,
    /// Slot for an external baseline that this crate does not implement.
    pub mcd: Option<f64>,
}

/// Per-replication outcome of the full test.
fn replicate_tests(config: &SimConfig) -> Result<(Vec<TestReport>, FailureCounts)> {
    config.validate()?;
    let outcomes: Vec<Result<TestReport>> = with_pool(|| {
        (0..config.replications)
            .into_par_iter()
            .map(|rep| {
                let seed = replication_seed(config.seed, rep);
                let data = generate_dgp(config, seed)?;
                run_overid_test(&data, &config.test_config(seed))
            })
            .collect()
    });
    let mut reports = Vec::with_capacity(outcomes.len());
    let mut failures = FailureCounts::default();
    for o in outcomes {
        match o {
            Ok(r) => reports.push(r),
            Err(e @ (HdivError::Config(_) | HdivError::Io(_))) => return Err(e),
            Err(e) => failures.record(&e),
        }
    }
    Ok((reports, failures))
}

fn tally(config: &SimConfig, reports: &[TestReport], failures: FailureCounts) -> SizeTable {
    let k = reports.len();
    let count = |f: fn(&TestReport) -> bool| reports.iter().filter(|r| f(r)).count();
    SizeTable {
        config: config.clone(),
        completed: k,
        failures,
        m: Rate::from_counts(count(|r| r.reject_m), k),
        q: Rate::from_counts(count(|r| r.reject_q), k),
        pm: Rate::from_counts(count(|r| r.reject_pm), k),
        mcd: None,
    }
}

/// Rejection rates over seeded replications. Failed replications are
/// excluded from the denominators and counted in `failures`.
pub fn run_size_experiment(config: &SimConfig) -> Result<SizeTable> {
    let (reports, failures) = replicate_tests(config)?;
    Ok(tally(config, &reports, failures))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub rho: f64,
    pub completed: usize,
    pub failures: usize,
    pub m: Rate,
    pub pm: Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    pub config: SimConfig,
    pub points: Vec<PowerPoint>,
}

pub fn run_power_curve(config: &SimConfig, rho_grid: &[f64]) -> Result<PowerCurve> {
    if rho_grid.is_empty() {
        return Err(HdivError::Config("rho grid must be nonempty".into()));
    }
    let mut points = Vec::with_capacity(rho_grid.len());
    for &rho in rho_grid {
        let table = run_size_experiment(&config.with_rho(rho))?;
        points.push(PowerPoint {
            rho,
            completed: table.completed,
            failures: table.failures.total(),
            m: table.m,
            pm: table.pm,
        });
    }
    Ok(PowerCurve {
        config: config.clone(),
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaTable {
    pub config: SimConfig,
    pub completed: usize,
    pub weak: usize,
    pub failures: FailureCounts,
    pub mae: f64,
    pub coverage: f64,
    pub mean_length: f64,
}

/// Only the estimation steps of the recipe, for one replication.
pub fn estimate_replication(config: &SimConfig, rep_seed: u64) -> Result<BetaEstimate> {
    let data = generate_dgp(config, rep_seed)?;
    let a = data.weight_matrix()?;
    let fits = fit_reduced_forms(
        &data,
        &config.lasso,
        derive_seed(rep_seed, stream::OUTCOME_CV),
        derive_seed(rep_seed, stream::TREATMENT_CV),
    )?;
    let omega = clime(&data.gram(), default_mu(data.n(), data.p(), config.c_omega))?;
    Ok(estimate_beta(&data, &fits, &omega, &a, config.alpha)?.0)
}

/// MAE, coverage and mean interval length of the IQ estimator. Weak-flagged
/// replications are counted separately and excluded from the averages.
pub fn run_beta_table(config: &SimConfig) -> Result<BetaTable> {
    config.validate()?;
    let outcomes: Vec<Result<BetaEstimate>> = with_pool(|| {
        (0..config.replications)
            .into_par_iter()
            .map(|rep| estimate_replication(config, replication_seed(config.seed, rep)))
            .collect()
    });
    let mut failures = FailureCounts::default();
    let (mut k, mut weak) = (0usize, 0usize);
    let (mut abs_err, mut covered, mut length) = (0.0, 0usize, 0.0);
    for o in outcomes {
        match o {
            Ok(b) if b.weak_flag => weak += 1,
            Ok(b) => {
                k += 1;
                abs_err += (b.beta_hat - config.beta).abs();
                if let Some((lo, hi)) = b.ci {
                    covered += usize::from(lo <= config.beta && config.beta <= hi);
                    length += hi - lo;
                }
            }
            Err(e @ (HdivError::Config(_) | HdivError::Io(_))) => return Err(e),
            Err(e) => failures.record(&e),
        }
    }
    let kf = k as f64;
    Ok(BetaTable {
        config: config.clone(),
        completed: k,
        weak,
        failures,
        mae: abs_err / kf,
        coverage: covered as f64 / kf,
        mean_length: length / kf,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "lowercase")]
pub enum ExperimentOutput {
    Size(SizeTable),
    Power(PowerCurve),
    Beta(BetaTable),
}

pub fn run_experiment(config: &SimConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    Ok(match config.experiment {
        Experiment::Size => ExperimentOutput::Size(run_size_experiment(config)?),
        Experiment::Power => ExperimentOutput::Power(run_power_curve(config, &config.rho_grid)?),
        Experiment::Beta => ExperimentOutput::Beta(run_beta_table(config)?),
    })
}

fn variant_name(g: GammaVariant) -> &'static str {
    match g {
        GammaVariant::G1 => "g1",
        GammaVariant::G2 => "g2",
    }
}

impl ExperimentOutput {
    /// Writes the tabular form as CSV.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        match self {
            Self::Size(t) => {
                let c = &t.config;
                w.write_record([
                    "n",
                    "p_x",
                    "p_z",
                    "gamma",
                    "hetero",
                    "replications",
                    "completed",
                    "failures",
                    "rate_M",
                    "se_M",
                    "rate_Q",
                    "se_Q",
                    "rate_PM",
                    "se_PM",
                    "MCD",
                ])?;
                w.write_record([
                    c.n.to_string(),
                    c.p_x.to_string(),
                    c.p_z.to_string(),
                    variant_name(c.gamma).to_string(),
                    c.hetero.to_string(),
                    c.replications.to_string(),
                    t.completed.to_string(),
                    t.failures.total().to_string(),
                    t.m.rate.to_string(),
                    t.m.se.to_string(),
                    t.q.rate.to_string(),
                    t.q.se.to_string(),
                    t.pm.rate.to_string(),
                    t.pm.se.to_string(),
                    "external".to_string(),
                ])?;
            }
            Self::Power(curve) => {
                w.write_record(["rho", "rate_M", "rate_PM"])?;
                for pt in &curve.points {
                    w.write_record([pt.rho.to_string(), pt.m.rate.to_string(), pt.pm.rate.to_string()])?;
                }
            }
            Self::Beta(t) => {
                let c = &t.config;
                w.write_record([
                    "n",
                    "p_x",
                    "p_z",
                    "gamma",
                    "hetero",
                    "replications",
                    "completed",
                    "weak",
                    "MAE",
                    "coverage",
                    "length",
                ])?;
                w.write_record([
                    c.n.to_string(),
                    c.p_x.to_string(),
                    c.p_z.to_string(),
                    variant_name(c.gamma).to_string(),
                    c.hetero.to_string(),
                    c.replications.to_string(),
                    t.completed.to_string(),
                    t.weak.to_string(),
                    t.mae.to_string(),
                    t.coverage.to_string(),
                    t.mean_length.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, sink: W) -> Result<()> {
        serde_json::to_writer_pretty(sink, self)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig {
            n: 60,
            p_x: 12,
            p_z: 10,
            replications: 1,
            ..SimConfig::default()
        }
    }

    #[test]
    fn coefficient_vectors() {
        let c = SimConfig {
            p_x: 12,
            p_z: 10,
            ..SimConfig::default()
        };
        let phi = c.phi();
        assert_eq!(phi[0], 1.0);
        assert!((phi[9] - 0.5f64.powi(9)).abs() < 1e-15);
        assert_eq!(phi[10], 0.0);
        assert!((c.psi()[2] - 0.36).abs() < 1e-15);
        assert_eq!(c.gamma_vec().sum(), 7.0);
        let g2 = SimConfig {
            gamma: GammaVariant::G2,
            ..c.clone()
        }
        .gamma_vec();
        assert!((g2[6] - 0.8f64.powi(6)).abs() < 1e-15);
        assert_eq!(g2[7], 0.0);
        let p2 = SimConfig {
            pi: PiVariant::P2,
            ..c.clone()
        }
        .pi_vec()
        .unwrap();
        assert_eq!(p2.to_vec()[..5], [0.5, -0.5, 0.5, -0.5, 0.0]);
        let p1 = SimConfig {
            pi: PiVariant::P1,
            rho: 0.3,
            ..c.clone()
        }
        .pi_vec()
        .unwrap();
        assert_eq!(p1[0], 0.3);
        assert_eq!(p1.iter().filter(|v| **v != 0.0).count(), 1);
        let hundred = SimConfig {
            pi: PiVariant::P2,
            p_z: 100,
            ..c.clone()
        }
        .pi_vec()
        .unwrap();
        assert!((hundred.sum() - 3.0).abs() < 1e-12);
        assert!((SimConfig { hetero: true, ..c }.a0() - 0.8408964).abs() < 1e-7);
    }

    #[test]
    fn p2_rejects_other_dimensions() {
        let c = SimConfig {
            pi: PiVariant::P2,
            p_z: 50,
            ..SimConfig::default()
        };
        assert!(matches!(c.validate(), Err(HdivError::Config(_))));
        assert!(generate_dgp(&c, 1).is_err());
    }

    #[test]
    fn dgp_is_deterministic() {
        let c = small();
        let a = generate_dgp(&c, 5).unwrap();
        let b = generate_dgp(&c, 5).unwrap();
        assert_eq!(a.w(), b.w());
        assert_eq!(a.y(), b.y());
        let other = generate_dgp(&c, 6).unwrap();
        assert_ne!(a.y(), other.y());
    }

    #[test]
    fn dgp_moments() {
        let c = SimConfig {
            n: 10_000,
            p_x: 3,
            p_z: 2,
            ..SimConfig::default()
        };
        let data = generate_dgp(&c, 11).unwrap();
        let n = c.n as f64;
        let w = data.w();
        let tol = 3.0 / n.sqrt();
        for k in 0..4 {
            let a = w.column(k);
            let b = w.column(k + 1);
            let r = a.dot(&b) / (a.dot(&a) * b.dot(&b)).sqrt();
            assert!((r - 0.5).abs() < tol, "adjacent correlation {r}");
        }
        // structural error recovered from the model equation
        let e = &data.y() - &data.d() - &data.x().dot(&c.phi()) - &data.z().dot(&c.pi_vec().unwrap());
        let var = e.dot(&e) / n - (e.sum() / n).powi(2);
        assert!((var - 1.0).abs() < 3.0 * (2.0 / n).sqrt() + tol, "var {var}");
    }

    #[test]
    fn single_replication_rates() {
        let c = small();
        let table = run_size_experiment(&c).unwrap();
        assert_eq!(table.completed + table.failures.total(), 1);
        if table.completed == 1 {
            assert!(table.m.rate == 0.0 || table.m.rate == 1.0);
            assert_eq!(table.m.se, 0.0);
        }
    }

    #[test]
    fn rate_standard_error() {
        let r = Rate::from_counts(30, 400);
        assert_eq!(r.rate, 0.075);
        assert_eq!(r.se, (0.075f64 * 0.925 / 400.0).sqrt());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let res: std::result::Result<SimConfig, _> = serde_json::from_str(r#"{"n": 100, "replicatons": 3}"#);
        assert!(res.is_err());
        let ok: SimConfig = serde_json::from_str(r#"{"n": 100, "pi": "p1", "rho": 0.5}"#).unwrap();
        assert_eq!(ok.pi, PiVariant::P1);
    }

    #[test]
    fn power_csv_layout() {
        let c = SimConfig {
            pi: PiVariant::P1,
            replications: 1,
            n: 60,
            p_x: 12,
            ..SimConfig::default()
        };
        let curve = run_power_curve(&c, &[0.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        ExperimentOutput::Power(curve).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "rho,rate_M,rate_PM");
        assert_eq!(lines.len(), 3);
    }
}
