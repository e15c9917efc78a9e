//! Overidentification testing: the M statistic, the power-enhancing Q
//! statistic and their combination, the PM test.
//!
//! Given the IQ estimate `beta_hat`, the residual regression of
//! `Y - D beta_hat` on `W` estimates the projected invalidity vector `pi_A`.
//! Under the null of valid instruments `pi_A = 0`; the M statistic is the
//! scaled sup-norm of its debiased estimate and the Q statistic a debiased
//! quadratic form of it. Both are compared with one simulated critical value.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clime::{clime, default_mu, PrecisionEstimate};
use crate::data::{Dataset, WeightDiag};
use crate::error::{HdivError, Result};
use crate::iq::{
    certified_cv, estimate_beta, fit_reduced_forms, projection_direction, residual, BetaEstimate,
};
use crate::lasso::{CvResult, LassoConfig};
use crate::rng::{derive_seed, stream};

/// Multiplier draws are generated in blocks of this many, each block from
/// its own seeded stream.
const DRAW_BLOCK: usize = 256;

pub const MIN_DRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiFit {
    pub cv: CvResult,
    /// `Y - D beta_hat - X phi_hat - Z pi_hat`.
    pub residuals: Array1<f64>,
    pub p_x: usize,
}

impl PiFit {
    pub fn phi_hat(&self) -> ArrayView1<'_, f64> {
        self.cv.chosen_fit.coefficients.slice(s![..self.p_x])
    }

    pub fn pi_hat(&self) -> ArrayView1<'_, f64> {
        self.cv.chosen_fit.coefficients.slice(s![self.p_x..])
    }

    pub fn coefficients(&self) -> ArrayView1<'_, f64> {
        self.cv.chosen_fit.coefficients.view()
    }
}

fn structural_response(data: &Dataset, beta_hat: f64) -> Result<Array1<f64>> {
    if !beta_hat.is_finite() {
        return Err(HdivError::NonFinite("beta_hat".into()));
    }
    Ok(&data.y() - &(&data.d() * beta_hat))
}

pub fn fit_pi(data: &Dataset, beta_hat: f64, config: &LassoConfig, seed: u64) -> Result<PiFit> {
    let response = structural_response(data, beta_hat)?;
    let cv = certified_cv(data, response.view(), config, seed, "invalidity regression")?;
    let residuals = residual(response.view(), data.w(), cv.chosen_fit.coefficients.view());
    Ok(PiFit {
        cv,
        residuals,
        p_x: data.p_x(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasedPi {
    /// `(phi_tilde, pi_tilde)`.
    pub full: Array1<f64>,
    pub p_x: usize,
}

impl DebiasedPi {
    pub fn pi_tilde(&self) -> ArrayView1<'_, f64> {
        self.full.slice(s![self.p_x..])
    }

    pub fn phi_tilde(&self) -> ArrayView1<'_, f64> {
        self.full.slice(s![..self.p_x])
    }
}

/// `theta_hat + n^-1 Omega W' e_hat`.
pub fn debias_pi(pi_fit: &PiFit, omega: &PrecisionEstimate, w: ArrayView2<'_, f64>) -> DebiasedPi {
    let n = w.nrows() as f64;
    let score = w.t().dot(&pi_fit.residuals) / n;
    let full = &pi_fit.coefficients() + &omega.omega().dot(&score);
    DebiasedPi {
        full,
        p_x: pi_fit.p_x,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceVA {
    pub v_hat_a: Array2<f64>,
    pub a0_hat: Array2<f64>,
    pub omega_z: Array2<f64>,
    /// Row `i` is `e_i (A0 Omega_z W_i)'`, so `V_A = L'L / n`.
    pub multipliers: Array2<f64>,
}

impl CovarianceVA {
    /// Builds the covariance directly from a multiplier matrix `L` (`n x p_z`).
    pub fn from_multipliers(multipliers: Array2<f64>) -> Self {
        let p_z = multipliers.ncols();
        let v_hat_a = multipliers.t().dot(&multipliers) / multipliers.nrows() as f64;
        Self {
            v_hat_a,
            a0_hat: Array2::eye(p_z),
            omega_z: Array2::zeros((p_z, 0)),
            multipliers,
        }
    }
}

/// `A^{1/2} (I - gamma gamma' A / q_hat)`.
pub fn a0_matrix(a: &WeightDiag, gamma_hat: ArrayView1<'_, f64>, q_hat_gamma: f64) -> Array2<f64> {
    let p_z = gamma_hat.len();
    let ag = a.apply(gamma_hat);
    let sq = a.sqrt_diag();
    Array2::from_shape_fn((p_z, p_z), |(i, j)| {
        let id = if i == j { 1.0 } else { 0.0 };
        sq[i] * (id - gamma_hat[i] * ag[j] / q_hat_gamma)
    })
}

pub fn covariance_va(
    residuals: ArrayView1<'_, f64>,
    omega: &PrecisionEstimate,
    a: &WeightDiag,
    gamma_hat: ArrayView1<'_, f64>,
    q_hat_gamma: f64,
    w: ArrayView2<'_, f64>,
) -> Result<CovarianceVA> {
    if !(q_hat_gamma > 0.0) {
        return Err(HdivError::WeakInstruments { q_hat: q_hat_gamma });
    }
    let p_z = gamma_hat.len();
    let a0_hat = a0_matrix(a, gamma_hat, q_hat_gamma);
    let omega_z = omega.instrument_rows(p_z).to_owned();
    // (A0 Omega_z)' is p x p_z.
    let b = a0_hat.dot(&omega_z).reversed_axes();
    let mut multipliers = w.dot(&b);
    for (mut row, &e) in multipliers.axis_iter_mut(Axis(0)).zip(residuals.iter()) {
        row *= e;
    }
    let n = w.nrows() as f64;
    let mut v_hat_a = multipliers.t().dot(&multipliers) / n;
    for i in 0..p_z {
        for j in i + 1..p_z {
            let m = 0.5 * (v_hat_a[[i, j]] + v_hat_a[[j, i]]);
            v_hat_a[[i, j]] = m;
            v_hat_a[[j, i]] = m;
        }
    }
    Ok(CovarianceVA {
        v_hat_a,
        a0_hat,
        omega_z,
        multipliers,
    })
}

/// Simulated null distribution of `||eta||_inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalValue {
    pub cv: f64,
    pub alpha: f64,
    sorted_maxima: Vec<f64>,
}

impl CriticalValue {
    pub fn n_draws(&self) -> usize {
        self.sorted_maxima.len()
    }

    /// `(1 + #{b : max_b >= x}) / (B + 1)`.
    pub fn p_value(&self, x: f64) -> f64 {
        let below = self.sorted_maxima.partition_point(|&m| m < x);
        let at_or_above = self.sorted_maxima.len() - below;
        (1 + at_or_above) as f64 / (self.sorted_maxima.len() + 1) as f64
    }

    pub fn sorted_maxima(&self) -> &[f64] {
        &self.sorted_maxima
    }

    /// Empirical quantile at level `prob`, as `sorted[ceil(prob B) - 1]`.
    pub fn quantile(&self, prob: f64) -> f64 {
        empirical_quantile(&self.sorted_maxima, prob)
    }
}

fn empirical_quantile(sorted: &[f64], prob: f64) -> f64 {
    let b = sorted.len();
    let k = ((prob * b as f64).ceil() as usize).clamp(1, b);
    sorted[k - 1]
}

/// Multiplier bootstrap: `eta_b = n^{-1/2} L' w_b` with i.i.d. standard
/// normal `w_b`. Draws are produced in fixed blocks with per-block seeds, so
/// the result does not depend on the thread count.
pub fn critical_value(va: &CovarianceVA, alpha: f64, n_draws: usize, seed: u64) -> Result<CriticalValue> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(HdivError::Config(format!("alpha must be in (0, 1), got {alpha}")));
    }
    if n_draws < MIN_DRAWS {
        return Err(HdivError::Config(format!(
            "at least {MIN_DRAWS} multiplier draws are required, got {n_draws}"
        )));
    }
    let l = va.multipliers.view();
    let n = l.nrows();
    let scale = 1.0 / (n as f64).sqrt();
    let n_blocks = n_draws.div_ceil(DRAW_BLOCK);
    let blocks: Vec<Vec<f64>> = (0..n_blocks)
        .into_par_iter()
        .map(|blk| {
            let len = DRAW_BLOCK.min(n_draws - blk * DRAW_BLOCK);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, blk as u64));
            let g = Array2::from_shape_simple_fn((len, n), || StandardNormal.sample(&mut rng));
            let eta = g.dot(&l);
            eta.axis_iter(Axis(0))
                .map(|row| scale * row.iter().fold(0.0f64, |m, v| m.max(v.abs())))
                .collect()
        })
        .collect();
    let mut sorted: Vec<f64> = blocks.into_iter().flatten().collect();
    sorted.sort_by(f64::total_cmp);
    Ok(CriticalValue {
        cv: empirical_quantile(&sorted, 1.0 - alpha),
        alpha,
        sorted_maxima: sorted,
    })
}

/// `sqrt(n) max_j |A_j^{1/2} pi_j|`.
pub fn m_statistic(pi_tilde: ArrayView1<'_, f64>, a: &WeightDiag, n: usize) -> f64 {
    let max = pi_tilde
        .iter()
        .zip(a.sqrt_diag().iter())
        .fold(0.0f64, |m, (p, s)| m.max((p * s).abs()));
    (n as f64).sqrt() * max
}

/// `pi' A pi + (2/n) u_pi' W' e_hat` with `u_pi = Omega (0, A pi)`.
pub fn debiased_qa(pi_fit: &PiFit, omega: &PrecisionEstimate, a: &WeightDiag, w: ArrayView2<'_, f64>) -> f64 {
    let pi = pi_fit.pi_hat();
    let u = projection_direction(omega.omega(), a, pi);
    let n = w.nrows() as f64;
    a.quadratic(pi) + 2.0 * w.dot(&u).dot(&pi_fit.residuals) / n
}

/// `sqrt(n) ln(p) q_hat_a`.
pub fn q_statistic(q_hat_a: f64, n: usize, p: usize) -> f64 {
    (n as f64).sqrt() * (p as f64).ln() * q_hat_a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub reject_m: bool,
    pub reject_q: bool,
    pub reject_pm: bool,
}

pub fn pm_decision(m_stat: f64, q_stat: f64, cv: f64) -> Decision {
    Decision {
        reject_m: m_stat > cv,
        reject_q: q_stat > cv,
        reject_pm: m_stat.max(q_stat) > cv,
    }
}

/// `I_A(pi, gamma) / sqrt(Q_A(pi) Q_A(gamma))`, or 0 if either form is not
/// positive.
pub fn relatedness(pi: ArrayView1<'_, f64>, gamma: ArrayView1<'_, f64>, a: &WeightDiag) -> f64 {
    let qp = a.quadratic(pi);
    let qg = a.quadratic(gamma);
    if qp > 0.0 && qg > 0.0 {
        a.inner(pi, gamma) / (qp * qg).sqrt()
    } else {
        0.0
    }
}

/// `pi - gamma I_A(pi, gamma) / Q_A(gamma)`.
pub fn project_out(pi: ArrayView1<'_, f64>, gamma: ArrayView1<'_, f64>, a: &WeightDiag) -> Array1<f64> {
    let qg = a.quadratic(gamma);
    if qg > 0.0 {
        &pi - &(&gamma * (a.inner(pi, gamma) / qg))
    } else {
        pi.to_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestConfig {
    pub alpha: f64,
    pub n_draws: usize,
    pub seed: u64,
    pub c_omega: f64,
    pub lasso: LassoConfig,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            n_draws: 2000,
            seed: 0,
            c_omega: 0.6,
            lasso: LassoConfig::default(),
        }
    }
}

impl TestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(HdivError::Config(format!(
                "alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.n_draws < MIN_DRAWS {
            return Err(HdivError::Config(format!(
                "at least {MIN_DRAWS} multiplier draws are required, got {}",
                self.n_draws
            )));
        }
        if !(self.c_omega > 0.0) || !self.c_omega.is_finite() {
            return Err(HdivError::Config(format!(
                "c_omega must be positive, got {}",
                self.c_omega
            )));
        }
        self.lasso.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub q_hat_gamma: f64,
    pub relatedness: f64,
    pub weak_flag: bool,
    pub q_hat_a: f64,
    pub clime_mu: f64,
    pub clime_feasibility_gap: f64,
    pub lambda_outcome: f64,
    pub lambda_treatment: f64,
    pub lambda_pi: f64,
    pub va_min_eigenvalue_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub m_stat: f64,
    pub q_stat: f64,
    pub cv: f64,
    pub alpha: f64,
    pub p_value_m: f64,
    pub p_value_pm: f64,
    pub reject_m: bool,
    pub reject_q: bool,
    pub reject_pm: bool,
    pub n_draws: usize,
    pub seed: u64,
    pub beta: BetaEstimate,
    pub pi_tilde: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Lower bound on the smallest eigenvalue from Gershgorin discs.
fn gershgorin_lower(m: ArrayView2<'_, f64>) -> f64 {
    (0..m.nrows())
        .map(|i| {
            let off: f64 = (0..m.ncols()).filter(|&j| j != i).map(|j| m[[i, j]].abs()).sum();
            m[[i, i]] - off
        })
        .fold(f64::INFINITY, f64::min)
}

/// Runs the full recipe: reduced forms, precision matrix, IQ estimate,
/// invalidity regression, debiasing, covariance, critical value, statistics.
pub fn run_overid_test(data: &Dataset, config: &TestConfig) -> Result<TestReport> {
    config.validate()?;
    let seed = config.seed;
    let (n, p) = (data.n(), data.p());
    let a = data.weight_matrix()?;

    let fits = fit_reduced_forms(
        data,
        &config.lasso,
        derive_seed(seed, stream::OUTCOME_CV),
        derive_seed(seed, stream::TREATMENT_CV),
    )?;
    let sigma = data.gram();
    let omega = clime(&sigma, default_mu(n, p, config.c_omega))?;
    let (beta, _) = estimate_beta(data, &fits, &omega, &a, config.alpha)?;
    if beta.weak_flag {
        return Err(HdivError::WeakInstruments { q_hat: beta.q_hat });
    }

    let pi_fit = fit_pi(
        data,
        beta.beta_hat,
        &config.lasso,
        derive_seed(seed, stream::PI_CV),
    )?;
    let debiased = debias_pi(&pi_fit, &omega, data.w());
    let va = covariance_va(
        pi_fit.residuals.view(),
        &omega,
        &a,
        fits.gamma(),
        beta.q_hat,
        data.w(),
    )?;
    let cv = critical_value(
        &va,
        config.alpha,
        config.n_draws,
        derive_seed(seed, stream::MULTIPLIER),
    )?;

    let m_stat = m_statistic(debiased.pi_tilde(), &a, n);
    let q_hat_a = debiased_qa(&pi_fit, &omega, &a, data.w());
    let q_stat = q_statistic(q_hat_a, n, p);
    let decision = pm_decision(m_stat, q_stat, cv.cv);

    Ok(TestReport {
        m_stat,
        q_stat,
        cv: cv.cv,
        alpha: config.alpha,
        p_value_m: cv.p_value(m_stat),
        p_value_pm: cv.p_value(m_stat.max(q_stat)),
        reject_m: decision.reject_m,
        reject_q: decision.reject_q,
        reject_pm: decision.reject_pm,
        n_draws: config.n_draws,
        seed,
        pi_tilde: debiased.pi_tilde().to_vec(),
        diagnostics: Diagnostics {
            q_hat_gamma: beta.q_hat,
            relatedness: relatedness(pi_fit.pi_hat(), fits.gamma(), &a),
            weak_flag: beta.weak_flag,
            q_hat_a,
            clime_mu: omega.mu(),
            clime_feasibility_gap: omega.feasibility_gap(),
            lambda_outcome: fits.outcome.chosen_fit.lambda,
            lambda_treatment: fits.treatment.chosen_fit.lambda,
            lambda_pi: pi_fit.cv.chosen_fit.lambda,
            va_min_eigenvalue_bound: gershgorin_lower(va.v_hat_a.view()),
        },
        beta,
    })
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn random(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
        Array2::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn fake_pi_fit(coefficients: Array1<f64>, residuals: Array1<f64>, p_x: usize) -> PiFit {
        use crate::lasso::LassoFit;
        PiFit {
            cv: CvResult {
                lambda_grid: vec![1.0],
                cv_mean_error: vec![0.0],
                cv_se: vec![0.0],
                lambda_min: 1.0,
                lambda_1se: 1.0,
                index_min: 0,
                index_1se: 0,
                seed: 0,
                chosen_fit: LassoFit {
                    coefficients,
                    lambda: 1.0,
                    n_iterations: 0,
                    converged: true,
                    kkt_max_violation: 0.0,
                },
            },
            residuals,
            p_x,
        }
    }

    #[test]
    fn m_statistic_arithmetic() {
        let pi = array![0.3, -0.5];
        assert_eq!(
            m_statistic(Array1::zeros(2).view(), &WeightDiag::identity(2), 100),
            0.0
        );
        assert!((m_statistic(pi.view(), &WeightDiag::identity(2), 100) - 5.0).abs() < 1e-12);
        let a = WeightDiag::from_diag(array![4.0, 1.0]).unwrap();
        assert!((m_statistic(pi.view(), &a, 100) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn q_statistic_arithmetic() {
        assert_eq!(q_statistic(0.0, 100, 10), 0.0);
        assert!((q_statistic(0.1, 100, 10) - std::f64::consts::LN_10).abs() < 1e-12);
        assert!(q_statistic(-0.1, 100, 10) < 0.0);
    }

    #[test]
    fn decision_paths() {
        assert_eq!(
            pm_decision(3.0, 1.0, 2.0),
            Decision {
                reject_m: true,
                reject_q: false,
                reject_pm: true
            }
        );
        assert_eq!(
            pm_decision(1.0, 1.0, 2.0),
            Decision {
                reject_m: false,
                reject_q: false,
                reject_pm: false
            }
        );
        assert_eq!(
            pm_decision(1.0, 5.0, 2.0),
            Decision {
                reject_m: false,
                reject_q: true,
                reject_pm: true
            }
        );
    }

    #[test]
    fn relatedness_examples() {
        let i = WeightDiag::identity(2);
        let ones = array![1.0, 1.0];
        assert!((relatedness(ones.view(), ones.view(), &i) - 1.0).abs() < 1e-15);
        assert!(project_out(ones.view(), ones.view(), &i)
            .iter()
            .all(|v| v.abs() < 1e-15));
        assert_eq!(relatedness(array![1.0, -1.0].view(), ones.view(), &i), 0.0);
        let r = relatedness(array![1.0, 0.0].view(), ones.view(), &i);
        assert!((r - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(relatedness(Array1::zeros(2).view(), ones.view(), &i), 0.0);
    }

    #[test]
    fn debias_collapses() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random(&mut rng, (7, 4));
        let omega = PrecisionEstimate::from_matrix(Array2::eye(4));
        let coefs = array![0.1, 0.0, -0.3, 0.2];
        let fit = fake_pi_fit(coefs.clone(), Array1::zeros(7), 2);
        assert_eq!(debias_pi(&fit, &omega, w.view()).full, coefs);

        let r = Array1::from_shape_fn(7, |_| rng.random_range(-1.0..1.0));
        let fit = fake_pi_fit(Array1::zeros(4), r.clone(), 2);
        let db = debias_pi(&fit, &omega, w.view());
        let expect = w.slice(s![.., 2..]).t().dot(&r) / 7.0;
        for (a, b) in db.pi_tilde().iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn debias_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (n, p) = (9, 5);
        let w = random(&mut rng, (n, p));
        let omega_m = random(&mut rng, (p, p));
        let omega = PrecisionEstimate::from_matrix(omega_m.clone());
        let coefs = Array1::from_shape_fn(p, |_| rng.random_range(-1.0..1.0));
        let r = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
        let fit = fake_pi_fit(coefs.clone(), r.clone(), 2);
        let db = debias_pi(&fit, &omega, w.view());
        for j in 0..p {
            let mut s = 0.0;
            for k in 0..p {
                for i in 0..n {
                    s += omega_m[[j, k]] * w[[i, k]] * r[i];
                }
            }
            assert!((db.full[j] - coefs[j] - s / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn debiased_qa_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, p_x, p_z) = (5, 1, 2);
        let w = random(&mut rng, (n, p_x + p_z));
        let omega_m = random(&mut rng, (3, 3));
        let omega = PrecisionEstimate::from_matrix(omega_m.clone());
        let a = WeightDiag::from_diag(array![1.5, 0.7]).unwrap();
        let r = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));

        let zero_pi = fake_pi_fit(array![0.4, 0.0, 0.0], r.clone(), p_x);
        assert_eq!(debiased_qa(&zero_pi, &omega, &a, w.view()), 0.0);
        let fit = fake_pi_fit(array![0.4, 0.2, -0.6], Array1::zeros(n), p_x);
        assert!((debiased_qa(&fit, &omega, &a, w.view()) - a.quadratic(fit.pi_hat())).abs() < 1e-15);

        let pi = [0.2, -0.6];
        let fit = fake_pi_fit(array![0.4, 0.2, -0.6], r.clone(), p_x);
        let mut plug = 0.0;
        for k in 0..p_z {
            plug += pi[k] * a.diag()[k] * pi[k];
        }
        let mut corr = 0.0;
        for i in 0..n {
            for j in 0..3 {
                let mut u = 0.0;
                for k in 0..p_z {
                    u += omega_m[[j, p_x + k]] * a.diag()[k] * pi[k];
                }
                corr += u * w[[i, j]] * r[i];
            }
        }
        let want = plug + 2.0 * corr / n as f64;
        assert!((debiased_qa(&fit, &omega, &a, w.view()) - want).abs() < 1e-12);
    }

    #[test]
    fn covariance_zero_residuals_and_weak() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = random(&mut rng, (6, 3));
        let omega = PrecisionEstimate::from_matrix(Array2::eye(3));
        let a = WeightDiag::identity(2);
        let g = array![1.0, 0.5];
        let va = covariance_va(Array1::zeros(6).view(), &omega, &a, g.view(), 1.25, w.view()).unwrap();
        assert!(va.v_hat_a.iter().all(|&v| v == 0.0));
        let err = covariance_va(Array1::zeros(6).view(), &omega, &a, g.view(), 0.0, w.view());
        assert!(matches!(err, Err(HdivError::WeakInstruments { .. })));
    }

    #[test]
    fn covariance_projection_algebra() {
        // W'W/n = I with W = sqrt(n) * (orthonormal columns).
        let n = 4usize;
        let h = array![
            [1.0, 1.0, 1.0],
            [1.0, -1.0, 1.0],
            [1.0, 1.0, -1.0],
            [1.0, -1.0, -1.0]
        ] * 0.5;
        let w = h * (n as f64).sqrt();
        let omega = PrecisionEstimate::from_matrix(Array2::eye(3));
        let a = WeightDiag::identity(2);
        let g = array![0.6, -0.8];
        let c: f64 = 0.7;
        let e = Array1::from_elem(n, c);
        let va = covariance_va(e.view(), &omega, &a, g.view(), a.quadratic(g.view()), w.view()).unwrap();
        let sq: Array2<f64> = va.v_hat_a.dot(&va.v_hat_a);
        for (x, y) in sq.iter().zip(va.v_hat_a.iter()) {
            assert!((x - c * c * y).abs() < 1e-12);
        }
        let proj: Array2<f64> = Array2::eye(2) - &array![[0.36, -0.48], [-0.48, 0.64]];
        for (x, y) in va.v_hat_a.iter().zip(proj.iter()) {
            assert!((x - c * c * y).abs() < 1e-12);
        }
    }

    #[test]
    fn covariance_matches_four_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, p_x, p_z) = (10, 2, 3);
        let p = p_x + p_z;
        let w = random(&mut rng, (n, p));
        let omega_m = random(&mut rng, (p, p));
        let omega = PrecisionEstimate::from_matrix(omega_m.clone());
        let a = WeightDiag::from_diag(array![0.5, 1.2, 2.0]).unwrap();
        let g = array![0.7, -0.2, 0.4];
        let e = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
        let q = 0.9;
        let va = covariance_va(e.view(), &omega, &a, g.view(), q, w.view()).unwrap();
        let mut a0 = Array2::<f64>::zeros((p_z, p_z));
        for i in 0..p_z {
            for j in 0..p_z {
                let id = if i == j { 1.0 } else { 0.0 };
                a0[[i, j]] = a.diag()[i].sqrt() * (id - g[i] * g[j] * a.diag()[j] / q);
            }
        }
        // B = A0 Omega_z (p_z x p)
        let mut b = Array2::<f64>::zeros((p_z, p));
        for i in 0..p_z {
            for j in 0..p {
                for k in 0..p_z {
                    b[[i, j]] += a0[[i, k]] * omega_m[[p_x + k, j]];
                }
            }
        }
        for r in 0..p_z {
            for c in 0..p_z {
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..p {
                        for k in 0..p {
                            s += b[[r, j]] * w[[i, j]] * w[[i, k]] * e[i] * e[i] * b[[c, k]];
                        }
                    }
                }
                assert!((va.v_hat_a[[r, c]] - s / n as f64).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn critical_value_zero_residuals() {
        let va = CovarianceVA::from_multipliers(Array2::zeros((20, 3)));
        let cv = critical_value(&va, 0.05, 500, 1).unwrap();
        assert_eq!(cv.cv, 0.0);
        assert!((cv.p_value(0.1) - 1.0 / 501.0).abs() < 1e-15);
        assert_eq!(cv.p_value(0.0), 1.0);
    }

    #[test]
    fn critical_value_errors_and_determinism() {
        let va = CovarianceVA::from_multipliers(Array2::ones((10, 2)));
        assert!(critical_value(&va, 0.0, 500, 1).is_err());
        assert!(critical_value(&va, 1.0, 500, 1).is_err());
        assert!(critical_value(&va, 0.05, 50, 1).is_err());
        let a = critical_value(&va, 0.05, 700, 9).unwrap();
        let b = critical_value(&va, 0.05, 700, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_draws(), 700);
        let mut last = 1.0;
        for x in [0.0, 0.5, 1.0, 2.0, 3.0] {
            let p = a.p_value(x);
            assert!(p <= last && (0.0..=1.0).contains(&p));
            last = p;
        }
    }

    #[test]
    fn config_validation() {
        assert!(TestConfig::default().validate().is_ok());
        let bad = TestConfig {
            alpha: 1.5,
            ..TestConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TestConfig {
            n_draws: 10,
            ..TestConfig::default()
        };
        assert!(bad.validate().is_err());
        let parsed: std::result::Result<TestConfig, _> = serde_json::from_str(r#"{"alpah": 0.1}"#);
        assert!(parsed.is_err());
    }
}
