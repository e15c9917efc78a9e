//! The IQ estimator of the treatment effect: a debiased inner product over a
//! debiased quadratic form of the reduced-form instrument coefficients.
//!
//! With reduced forms `Y = X Psi + Z Gamma + e1` and `D = X psi + Z gamma + e2`
//! fitted by Lasso, the estimator is
//!
//! ```text
//! beta_hat = I_hat(gamma, Gamma) / Q_hat(gamma)      if Q_hat(gamma) > 0
//! ```
//!
//! where both terms are plug-in values corrected along projection directions
//! `u = Omega_hat (0, A v)`. The variance is heteroskedasticity robust and
//! uses the reduced-form Lasso residuals.

use ndarray::{s, Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::clime::PrecisionEstimate;
use crate::data::{Dataset, WeightDiag};
use crate::error::{HdivError, Result};
use crate::lasso::{cv_select, CvResult, LassoConfig, LassoProblem};

/// Fits below this KKT residual are accepted as certified.
pub const KKT_CERTIFICATE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedFormFits {
    /// `Y` on `W`: `(Psi_hat, Gamma_hat)`.
    pub outcome: CvResult,
    /// `D` on `W`: `(psi_hat, gamma_hat)`.
    pub treatment: CvResult,
    /// `Y - X Psi_hat - Z Gamma_hat`.
    pub eps1: Array1<f64>,
    /// `D - X psi_hat - Z gamma_hat`.
    pub eps2: Array1<f64>,
    pub p_x: usize,
}

impl ReducedFormFits {
    pub fn big_gamma(&self) -> ArrayView1<'_, f64> {
        self.outcome.chosen_fit.coefficients.slice(s![self.p_x..])
    }

    pub fn big_psi(&self) -> ArrayView1<'_, f64> {
        self.outcome.chosen_fit.coefficients.slice(s![..self.p_x])
    }

    pub fn gamma(&self) -> ArrayView1<'_, f64> {
        self.treatment.chosen_fit.coefficients.slice(s![self.p_x..])
    }

    pub fn psi(&self) -> ArrayView1<'_, f64> {
        self.treatment.chosen_fit.coefficients.slice(s![..self.p_x])
    }
}

/// Cross-validated Lasso of `response` on `W`, escalating any failure to
/// certify the fit.
pub(crate) fn certified_cv(
    data: &Dataset,
    response: ArrayView1<'_, f64>,
    config: &LassoConfig,
    seed: u64,
    label: &str,
) -> Result<CvResult> {
    let problem = LassoProblem::new(data.w(), response, data.penalty_factors())?;
    let cv = cv_select(&problem, config, seed)?;
    let fit = &cv.chosen_fit;
    if !fit.converged || fit.kkt_max_violation > KKT_CERTIFICATE {
        return Err(HdivError::LassoNotConverged {
            problem: label.to_string(),
            lambda: fit.lambda,
        });
    }
    Ok(cv)
}

pub(crate) fn residual(
    response: ArrayView1<'_, f64>,
    w: ArrayView2<'_, f64>,
    coefficients: ArrayView1<'_, f64>,
) -> Array1<f64> {
    &response - &w.dot(&coefficients)
}

pub fn fit_reduced_forms(
    data: &Dataset,
    config: &LassoConfig,
    outcome_seed: u64,
    treatment_seed: u64,
) -> Result<ReducedFormFits> {
    let outcome = certified_cv(data, data.y(), config, outcome_seed, "outcome reduced form")?;
    let treatment = certified_cv(data, data.d(), config, treatment_seed, "treatment reduced form")?;
    let eps1 = residual(data.y(), data.w(), outcome.chosen_fit.coefficients.view());
    let eps2 = residual(data.d(), data.w(), treatment.chosen_fit.coefficients.view());
    Ok(ReducedFormFits {
        outcome,
        treatment,
        eps1,
        eps2,
        p_x: data.p_x(),
    })
}

/// `Omega_hat (0_{p_x}, A v)` for an instrument-block vector `v`.
pub fn projection_direction(
    omega: ArrayView2<'_, f64>,
    a: &WeightDiag,
    v: ArrayView1<'_, f64>,
) -> Array1<f64> {
    let p = omega.nrows();
    let p_z = v.len();
    let av = a.apply(v);
    omega.slice(s![.., p - p_z..]).dot(&av)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionDirections {
    pub u_gamma: Array1<f64>,
    pub u_big_gamma: Array1<f64>,
}

pub fn projection_directions(
    omega: &PrecisionEstimate,
    a: &WeightDiag,
    gamma_hat: ArrayView1<'_, f64>,
    big_gamma_hat: ArrayView1<'_, f64>,
) -> ProjectionDirections {
    ProjectionDirections {
        u_gamma: projection_direction(omega.omega(), a, gamma_hat),
        u_big_gamma: projection_direction(omega.omega(), a, big_gamma_hat),
    }
}

/// `n^-1 u' W' r`.
fn correction(u: ArrayView1<'_, f64>, w: ArrayView2<'_, f64>, r: ArrayView1<'_, f64>) -> f64 {
    w.dot(&u).dot(&r) / w.nrows() as f64
}

/// `gamma' A gamma + (2/n) u_gamma' W' eps2`.
pub fn debiased_quadratic(
    gamma_hat: ArrayView1<'_, f64>,
    a: &WeightDiag,
    u_gamma: ArrayView1<'_, f64>,
    w: ArrayView2<'_, f64>,
    eps2: ArrayView1<'_, f64>,
) -> f64 {
    a.quadratic(gamma_hat) + 2.0 * correction(u_gamma, w, eps2)
}

/// `gamma' A Gamma + n^-1 u_Gamma' W' eps2 + n^-1 u_gamma' W' eps1`.
pub fn debiased_inner(
    gamma_hat: ArrayView1<'_, f64>,
    big_gamma_hat: ArrayView1<'_, f64>,
    a: &WeightDiag,
    directions: &ProjectionDirections,
    w: ArrayView2<'_, f64>,
    eps1: ArrayView1<'_, f64>,
    eps2: ArrayView1<'_, f64>,
) -> f64 {
    a.inner(gamma_hat, big_gamma_hat)
        + correction(directions.u_big_gamma.view(), w, eps2)
        + correction(directions.u_gamma.view(), w, eps1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaEstimate {
    pub beta_hat: f64,
    pub i_hat: f64,
    pub q_hat: f64,
    pub v_beta: f64,
    pub level: f64,
    /// `None` when the instruments are flagged weak.
    pub ci: Option<(f64, f64)>,
    pub weak_flag: bool,
    pub n: usize,
}

impl BetaEstimate {
    pub fn std_error(&self) -> f64 {
        (self.v_beta / self.n as f64).sqrt()
    }

    pub fn ci_length(&self) -> Option<f64> {
        self.ci.map(|(lo, hi)| hi - lo)
    }
}

/// Two-sided standard normal quantile `z_{1 - alpha/2}`.
pub fn normal_quantile(prob: f64) -> f64 {
    Normal::standard().inverse_cdf(prob)
}

/// Assembles the IQ estimate and its robust variance from fitted pieces.
pub fn estimate_beta(
    data: &Dataset,
    fits: &ReducedFormFits,
    omega: &PrecisionEstimate,
    a: &WeightDiag,
    alpha: f64,
) -> Result<(BetaEstimate, ProjectionDirections)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(HdivError::Config(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let w = data.w();
    let dirs = projection_directions(omega, a, fits.gamma(), fits.big_gamma());
    let q_hat = debiased_quadratic(fits.gamma(), a, dirs.u_gamma.view(), w, fits.eps2.view());
    let i_hat = debiased_inner(
        fits.gamma(),
        fits.big_gamma(),
        a,
        &dirs,
        w,
        fits.eps1.view(),
        fits.eps2.view(),
    );
    Ok((
        assemble_beta(w, &dirs, i_hat, q_hat, fits.eps1.view(), fits.eps2.view(), alpha),
        dirs,
    ))
}

pub(crate) fn assemble_beta(
    w: ArrayView2<'_, f64>,
    dirs: &ProjectionDirections,
    i_hat: f64,
    q_hat: f64,
    eps1: ArrayView1<'_, f64>,
    eps2: ArrayView1<'_, f64>,
    alpha: f64,
) -> BetaEstimate {
    let n = w.nrows();
    let weak = !(q_hat > 0.0);
    let beta_hat = if weak { 0.0 } else { i_hat / q_hat };
    let proj = w.dot(&dirs.u_gamma);
    let v_beta = if weak {
        0.0
    } else {
        let s: f64 = proj
            .iter()
            .zip(eps1.iter().zip(eps2.iter()))
            .map(|(&wu, (&e1, &e2))| {
                let r = e1 - beta_hat * e2;
                wu * wu * r * r
            })
            .sum();
        s / n as f64 / (q_hat * q_hat)
    };
    let ci = (!weak).then(|| {
        let half = normal_quantile(1.0 - alpha / 2.0) * (v_beta / n as f64).sqrt();
        (beta_hat - half, beta_hat + half)
    });
    BetaEstimate {
        beta_hat,
        i_hat,
        q_hat,
        v_beta,
        level: 1.0 - alpha,
        ci,
        weak_flag: weak,
        n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
        Array2::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
        Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_omega_direction_is_padded_gamma() {
        let omega = PrecisionEstimate::from_matrix(Array2::eye(5));
        let a = WeightDiag::identity(3);
        let gamma = array![0.3, -1.0, 2.0];
        let dirs = projection_directions(&omega, &a, gamma.view(), gamma.view());
        assert_eq!(dirs.u_gamma, array![0.0, 0.0, 0.3, -1.0, 2.0]);
        let zero = projection_direction(omega.omega(), &a, Array1::zeros(3).view());
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn direction_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (p_x, p_z) = (5, 7);
        let p = p_x + p_z;
        let omega = random(&mut rng, (p, p));
        let a = WeightDiag::from_diag(Array1::from_shape_fn(p_z, |_| rng.random_range(0.2..2.0))).unwrap();
        let v = random_vec(&mut rng, p_z);
        let u = projection_direction(omega.view(), &a, v.view());
        for i in 0..p {
            let mut s = 0.0;
            for k in 0..p_z {
                s += omega[[i, p_x + k]] * a.diag()[k] * v[k];
            }
            assert!((u[i] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn corrections_vanish_with_zero_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random(&mut rng, (6, 4));
        let a = WeightDiag::from_diag(array![2.0, 0.5]).unwrap();
        let gamma = array![1.0, -0.5];
        let big = array![0.2, 0.7];
        let dirs = ProjectionDirections {
            u_gamma: random_vec(&mut rng, 4),
            u_big_gamma: random_vec(&mut rng, 4),
        };
        let zeros = Array1::zeros(6);
        let q = debiased_quadratic(gamma.view(), &a, dirs.u_gamma.view(), w.view(), zeros.view());
        assert_eq!(q, a.quadratic(gamma.view()));
        let i = debiased_inner(
            gamma.view(),
            big.view(),
            &a,
            &dirs,
            w.view(),
            zeros.view(),
            zeros.view(),
        );
        assert_eq!(i, a.inner(gamma.view(), big.view()));
        let zero_dirs = ProjectionDirections {
            u_gamma: Array1::zeros(4),
            u_big_gamma: Array1::zeros(4),
        };
        let r = random_vec(&mut rng, 6);
        let q0 = debiased_quadratic(
            Array1::zeros(2).view(),
            &a,
            zero_dirs.u_gamma.view(),
            w.view(),
            r.view(),
        );
        assert_eq!(q0, 0.0);
    }

    #[test]
    fn duplicate_equations_make_inner_equal_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random(&mut rng, (8, 5));
        let a = WeightDiag::from_diag(array![1.5, 0.5, 1.0]).unwrap();
        let gamma = random_vec(&mut rng, 3);
        let u = random_vec(&mut rng, 5);
        let r = random_vec(&mut rng, 8);
        let dirs = ProjectionDirections {
            u_gamma: u.clone(),
            u_big_gamma: u.clone(),
        };
        let q = debiased_quadratic(gamma.view(), &a, u.view(), w.view(), r.view());
        let i = debiased_inner(
            gamma.view(),
            gamma.view(),
            &a,
            &dirs,
            w.view(),
            r.view(),
            r.view(),
        );
        assert!((q - i).abs() < 1e-14);
    }

    #[test]
    fn weak_instruments_zero_beta_and_no_ci() {
        let w = Array2::eye(3);
        let dirs = ProjectionDirections {
            u_gamma: array![1.0, 0.0, 0.0],
            u_big_gamma: array![0.0, 1.0, 0.0],
        };
        let e = array![0.1, 0.2, 0.3];
        let est = assemble_beta(w.view(), &dirs, 0.3, -0.01, e.view(), e.view(), 0.05);
        assert!(est.weak_flag);
        assert_eq!(est.beta_hat, 0.0);
        assert!(est.ci.is_none());
        let est = assemble_beta(w.view(), &dirs, 0.3, 0.6, e.view(), e.view(), 0.05);
        assert!(!est.weak_flag);
        assert_eq!(est.beta_hat * est.q_hat, est.i_hat);
        let (lo, hi) = est.ci.unwrap();
        let half = 1.959963984540054 * est.std_error();
        assert!((hi - est.beta_hat - half).abs() < 1e-12);
        assert!((est.beta_hat - lo - half).abs() < 1e-12);
        assert!(est.v_beta >= 0.0);
    }

    #[test]
    fn normal_quantile_accuracy() {
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-9);
        assert!((normal_quantile(0.995) - 2.5758293035489004).abs() < 1e-9);
    }
}
