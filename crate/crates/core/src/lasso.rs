//! L1-penalized least squares by cyclic coordinate descent.
//!
//! The objective is
//!
//! ```text
//! (1/n) ||y - X b||^2 + lambda * sum_j f_j |b_j|
//! ```
//!
//! with per-column penalty factors `f_j >= 0`. The solver works on the
//! covariance form (`X'X / n`, `X'y / n`), so a fit costs `O(p)` per
//! coordinate update once the Gram matrix is formed. There is no intercept:
//! callers center their data.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HdivError, Result};

/// Tolerance used when certifying the subgradient conditions of a fit.
pub const KKT_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct LassoProblem<'a> {
    design: ArrayView2<'a, f64>,
    response: ArrayView1<'a, f64>,
    penalty_factors: Array1<f64>,
}

impl<'a> LassoProblem<'a> {
    pub fn new(
        design: ArrayView2<'a, f64>,
        response: ArrayView1<'a, f64>,
        penalty_factors: Array1<f64>,
    ) -> Result<Self> {
        if design.nrows() != response.len() {
            return Err(HdivError::Dimension(format!(
                "design has {} rows but response has {}",
                design.nrows(),
                response.len()
            )));
        }
        if penalty_factors.len() != design.ncols() {
            return Err(HdivError::Dimension(format!(
                "{} penalty factors for {} columns",
                penalty_factors.len(),
                design.ncols()
            )));
        }
        if penalty_factors.iter().any(|&f| !(f >= 0.0) || !f.is_finite()) {
            return Err(HdivError::Config(
                "penalty factors must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            design,
            response,
            penalty_factors,
        })
    }

    /// Every column penalized with factor 1.
    pub fn standard(design: ArrayView2<'a, f64>, response: ArrayView1<'a, f64>) -> Result<Self> {
        let p = design.ncols();
        Self::new(design, response, Array1::ones(p))
    }

    pub fn design(&self) -> ArrayView2<'a, f64> {
        self.design
    }

    pub fn response(&self) -> ArrayView1<'a, f64> {
        self.response
    }

    pub fn penalty_factors(&self) -> ArrayView1<'_, f64> {
        self.penalty_factors.view()
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    fn has_penalized(&self) -> bool {
        self.penalty_factors.iter().any(|&f| f > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub coefficients: Array1<f64>,
    pub lambda: f64,
    pub n_iterations: usize,
    pub converged: bool,
    pub kkt_max_violation: f64,
}

impl LassoFit {
    pub fn active_set(&self) -> Vec<usize> {
        self.coefficients
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0.0)
            .map(|(j, _)| j)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LassoConfig {
    pub folds: usize,
    pub n_lambdas: usize,
    /// Smallest-to-largest lambda ratio; `None` picks 1e-3 when `n > p` and
    /// 1e-2 otherwise.
    pub lambda_ratio: Option<f64>,
    /// Convergence threshold on the largest coefficient change in a sweep.
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            n_lambdas: 100,
            lambda_ratio: None,
            tolerance: 1e-8,
            max_sweeps: 100_000,
        }
    }
}

impl LassoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(HdivError::Config(format!(
                "need at least 2 folds, got {}",
                self.folds
            )));
        }
        if self.n_lambdas < 2 {
            return Err(HdivError::Config(format!(
                "need at least 2 lambdas, got {}",
                self.n_lambdas
            )));
        }
        if let Some(r) = self.lambda_ratio {
            if !(r > 0.0 && r < 1.0) {
                return Err(HdivError::Config(format!(
                    "lambda_ratio must be in (0, 1), got {r}"
                )));
            }
        }
        if !(self.tolerance > 0.0) || self.max_sweeps == 0 {
            return Err(HdivError::Config(
                "tolerance and max_sweeps must be positive".into(),
            ));
        }
        Ok(())
    }

    fn ratio_for(&self, n: usize, p: usize) -> f64 {
        self.lambda_ratio.unwrap_or(if n > p { 1e-3 } else { 1e-2 })
    }
}

/// Covariance-form sufficient statistics of a least-squares problem.
struct Moments {
    gram: Array2<f64>,
    cross: Array1<f64>,
}

impl Moments {
    fn of(design: ArrayView2<'_, f64>, response: ArrayView1<'_, f64>) -> Self {
        let n = design.nrows() as f64;
        Self {
            gram: design.t().dot(&design) / n,
            cross: design.t().dot(&response) / n,
        }
    }

    /// Moments of the rows not in `held_out`, derived from the full-sample
    /// moments by subtracting the held-out contribution.
    fn without_rows(
        &self,
        n_total: usize,
        design: ArrayView2<'_, f64>,
        response: ArrayView1<'_, f64>,
        held_out: &[usize],
    ) -> Self {
        let sub_w = design.select(Axis(0), held_out);
        let sub_y = response.select(Axis(0), held_out);
        let n = n_total as f64;
        let m = (n_total - held_out.len()) as f64;
        Self {
            gram: (&self.gram * n - sub_w.t().dot(&sub_w)) / m,
            cross: (&self.cross * n - sub_w.t().dot(&sub_y)) / m,
        }
    }
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

struct DescentOutcome {
    sweeps: usize,
    converged: bool,
}

/// Coordinate descent on the covariance form, updating `beta` in place.
///
/// Alternates a full sweep over all coordinates with sweeps restricted to the
/// current active set; stops after a full sweep whose largest coefficient
/// change is below `tolerance`.
fn coordinate_descent(
    moments: &Moments,
    factors: ArrayView1<'_, f64>,
    lambda: f64,
    beta: &mut Array1<f64>,
    tolerance: f64,
    max_sweeps: usize,
) -> DescentOutcome {
    let p = beta.len();
    let g = &moments.gram;
    // grad[j] = c_j - (G beta)_j
    let mut grad = &moments.cross - &g.dot(&*beta);
    let mut sweeps = 0;

    let update = |j: usize, beta: &mut Array1<f64>, grad: &mut Array1<f64>| -> f64 {
        let gjj = g[[j, j]];
        if gjj <= 0.0 {
            return 0.0;
        }
        let old = beta[j];
        let z = grad[j] + gjj * old;
        let new = soft_threshold(z, 0.5 * lambda * factors[j]) / gjj;
        let delta = new - old;
        if delta != 0.0 {
            beta[j] = new;
            grad.scaled_add(-delta, &g.row(j));
        }
        delta.abs()
    };

    loop {
        if sweeps >= max_sweeps {
            return DescentOutcome {
                sweeps,
                converged: false,
            };
        }
        sweeps += 1;
        let mut max_change = 0.0f64;
        for j in 0..p {
            max_change = max_change.max(update(j, beta, &mut grad));
        }
        if max_change < tolerance {
            return DescentOutcome {
                sweeps,
                converged: true,
            };
        }
        let active: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
        loop {
            if sweeps >= max_sweeps {
                return DescentOutcome {
                    sweeps,
                    converged: false,
                };
            }
            sweeps += 1;
            let mut max_change = 0.0f64;
            for &j in &active {
                max_change = max_change.max(update(j, beta, &mut grad));
            }
            if max_change < tolerance {
                break;
            }
        }
    }
}

/// Largest violation of the Lasso subgradient conditions, computed from the
/// raw design and residual.
pub fn kkt_violation(problem: &LassoProblem<'_>, coefficients: ArrayView1<'_, f64>, lambda: f64) -> f64 {
    let n = problem.n() as f64;
    let residual = &problem.response - &problem.design.dot(&coefficients);
    let score = problem.design.t().dot(&residual) * (2.0 / n);
    kkt_from_score(score.view(), coefficients, problem.penalty_factors(), lambda)
}

fn kkt_from_score(
    score: ArrayView1<'_, f64>,
    beta: ArrayView1<'_, f64>,
    factors: ArrayView1<'_, f64>,
    lambda: f64,
) -> f64 {
    score
        .iter()
        .zip(beta.iter())
        .zip(factors.iter())
        .map(|((&s, &b), &f)| {
            let bound = lambda * f;
            if b != 0.0 {
                (s - bound * b.signum()).abs()
            } else {
                (s.abs() - bound).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

fn solve_with_moments(
    moments: &Moments,
    factors: ArrayView1<'_, f64>,
    lambda: f64,
    warm_start: Option<ArrayView1<'_, f64>>,
    config: &LassoConfig,
) -> LassoFit {
    let p = factors.len();
    let mut beta = match warm_start {
        Some(w) => w.to_owned(),
        None => Array1::zeros(p),
    };
    let outcome = coordinate_descent(
        moments,
        factors,
        lambda,
        &mut beta,
        config.tolerance,
        config.max_sweeps,
    );
    let score = (&moments.cross - &moments.gram.dot(&beta)) * 2.0;
    let kkt = kkt_from_score(score.view(), beta.view(), factors, lambda);
    if !outcome.converged {
        log::warn!(
            "lasso did not converge within {} sweeps at lambda = {lambda:e}",
            outcome.sweeps
        );
    }
    LassoFit {
        coefficients: beta,
        lambda,
        n_iterations: outcome.sweeps,
        converged: outcome.converged,
        kkt_max_violation: kkt,
    }
}

pub fn solve_lasso(
    problem: &LassoProblem<'_>,
    lambda: f64,
    warm_start: Option<ArrayView1<'_, f64>>,
) -> Result<LassoFit> {
    solve_lasso_with(problem, lambda, warm_start, &LassoConfig::default())
}

pub fn solve_lasso_with(
    problem: &LassoProblem<'_>,
    lambda: f64,
    warm_start: Option<ArrayView1<'_, f64>>,
    config: &LassoConfig,
) -> Result<LassoFit> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(HdivError::Config(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if let Some(w) = warm_start {
        if w.len() != problem.p() {
            return Err(HdivError::Dimension("warm start has the wrong length".into()));
        }
    }
    let moments = Moments::of(problem.design, problem.response);
    let mut fit = solve_with_moments(&moments, problem.penalty_factors(), lambda, warm_start, config);
    fit.kkt_max_violation = kkt_violation(problem, fit.coefficients.view(), lambda);
    Ok(fit)
}

/// Smallest lambda at which every penalized coefficient is zero.
fn lambda_max_from(moments: &Moments, factors: ArrayView1<'_, f64>, config: &LassoConfig) -> f64 {
    let p = factors.len();
    let mut beta = Array1::zeros(p);
    if factors.iter().any(|&f| f == 0.0) {
        // Fit the unpenalized block alone; penalized coordinates stay at zero.
        let unpenalized: Vec<usize> = (0..p).filter(|&j| factors[j] == 0.0).collect();
        let sub = Moments {
            gram: moments
                .gram
                .select(Axis(0), &unpenalized)
                .select(Axis(1), &unpenalized),
            cross: moments.cross.select(Axis(0), &unpenalized),
        };
        let mut sub_beta = Array1::zeros(unpenalized.len());
        let zeros = Array1::zeros(unpenalized.len());
        coordinate_descent(
            &sub,
            zeros.view(),
            1.0,
            &mut sub_beta,
            config.tolerance,
            config.max_sweeps,
        );
        for (k, &j) in unpenalized.iter().enumerate() {
            beta[j] = sub_beta[k];
        }
    }
    let grad = &moments.cross - &moments.gram.dot(&beta);
    (0..p)
        .filter(|&j| factors[j] > 0.0)
        .map(|j| 2.0 * grad[j].abs() / factors[j])
        .fold(0.0, f64::max)
}

fn log_grid(lambda_max: f64, n_points: usize, ratio: f64) -> Vec<f64> {
    let step = ratio.ln() / (n_points - 1) as f64;
    (0..n_points)
        .map(|k| {
            if k == 0 {
                lambda_max
            } else if k == n_points - 1 {
                lambda_max * ratio
            } else {
                lambda_max * (step * k as f64).exp()
            }
        })
        .collect()
}

fn check_path_args(problem: &LassoProblem<'_>, n_points: usize, ratio: f64) -> Result<()> {
    if !problem.has_penalized() {
        return Err(HdivError::LassoPath("all penalty factors are zero".into()));
    }
    if n_points < 2 {
        return Err(HdivError::LassoPath(format!(
            "need at least 2 path points, got {n_points}"
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(HdivError::LassoPath(format!(
            "ratio must be in (0, 1), got {ratio}"
        )));
    }
    Ok(())
}

/// Log-spaced, descending lambda grid from `lambda_max` to
/// `lambda_max * ratio`.
pub fn lambda_path(problem: &LassoProblem<'_>, n_points: usize, ratio: f64) -> Result<Vec<f64>> {
    check_path_args(problem, n_points, ratio)?;
    let moments = Moments::of(problem.design, problem.response);
    let mut lambda_max = lambda_max_from(&moments, problem.penalty_factors(), &LassoConfig::default());
    if lambda_max <= 0.0 {
        // Nothing to explain: any positive lambda gives the zero solution.
        lambda_max = 1.0;
    }
    Ok(log_grid(lambda_max, n_points, ratio))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub lambda_grid: Vec<f64>,
    pub cv_mean_error: Vec<f64>,
    pub cv_se: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_1se: f64,
    pub index_min: usize,
    pub index_1se: usize,
    pub seed: u64,
    pub chosen_fit: LassoFit,
}

/// Seeded random partition of `0..n` into `k` folds whose sizes differ by at
/// most one.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(HdivError::Config(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(HdivError::Config(format!(
            "{n} observations cannot fill {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, &i) in order.iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// K-fold cross-validation over a lambda path with the one-standard-error
/// rule; the returned fit is refit on all rows at `lambda_1se`.
pub fn cv_select(problem: &LassoProblem<'_>, config: &LassoConfig, seed: u64) -> Result<CvResult> {
    let n = problem.n();
    let ratio = config.ratio_for(n, problem.p());
    check_path_args(problem, config.n_lambdas, ratio)?;
    let folds = fold_assignment(n, config.folds, seed)?;
    if folds.iter().any(Vec::is_empty) {
        return Err(HdivError::Config("a cross-validation fold is empty".into()));
    }

    let factors = problem.penalty_factors();
    let full = Moments::of(problem.design, problem.response);
    let mut lambda_max = lambda_max_from(&full, factors, config);
    if lambda_max <= 0.0 {
        lambda_max = 1.0;
    }
    let grid = log_grid(lambda_max, config.n_lambdas, ratio);

    let fold_errors: Vec<Vec<f64>> = folds
        .par_iter()
        .map(|held_out| {
            let train = full.without_rows(n, problem.design, problem.response, held_out);
            let test_w = problem.design.select(Axis(0), held_out);
            let test_y = problem.response.select(Axis(0), held_out);
            let mut beta = Array1::zeros(problem.p());
            grid.iter()
                .map(|&lambda| {
                    let fit = solve_with_moments(&train, factors, lambda, Some(beta.view()), config);
                    beta = fit.coefficients;
                    let resid = &test_y - &test_w.dot(&beta);
                    resid.dot(&resid) / held_out.len() as f64
                })
                .collect()
        })
        .collect();

    let k = folds.len() as f64;
    let mut cv_mean = Vec::with_capacity(grid.len());
    let mut cv_se = Vec::with_capacity(grid.len());
    for l in 0..grid.len() {
        let errs: Vec<f64> = fold_errors.iter().map(|e| e[l]).collect();
        let mean = errs.iter().sum::<f64>() / k;
        let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (k - 1.0);
        cv_mean.push(mean);
        cv_se.push((var / k).sqrt());
    }
    let index_min = cv_mean
        .iter()
        .enumerate()
        .fold(0, |best, (l, &e)| if e < cv_mean[best] { l } else { best });
    let threshold = cv_mean[index_min] + cv_se[index_min];
    let index_1se = (0..=index_min)
        .find(|&l| cv_mean[l] <= threshold)
        .unwrap_or(index_min);

    // Refit along the full-data path with warm starts.
    let mut beta = Array1::zeros(problem.p());
    let mut chosen = None;
    for &lambda in &grid[..=index_1se] {
        let fit = solve_with_moments(&full, factors, lambda, Some(beta.view()), config);
        beta = fit.coefficients.clone();
        chosen = Some(fit);
    }
    let mut chosen_fit = chosen.expect("grid is nonempty");
    chosen_fit.kkt_max_violation = kkt_violation(problem, chosen_fit.coefficients.view(), chosen_fit.lambda);

    Ok(CvResult {
        lambda_min: grid[index_min],
        lambda_1se: grid[index_1se],
        lambda_grid: grid,
        cv_mean_error: cv_mean,
        cv_se,
        index_min,
        index_1se,
        seed,
        chosen_fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand_distr::{Distribution, StandardNormal};

    fn random_matrix(n: usize, p: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, p), |_| StandardNormal.sample(&mut rng))
    }

    /// Normal-equations oracle via Gaussian elimination with partial pivoting.
    fn ols(x: &Array2<f64>, y: &Array1<f64>) -> Array1<f64> {
        let mut a = x.t().dot(x);
        let mut b = x.t().dot(y);
        let p = b.len();
        for col in 0..p {
            let piv = (col..p)
                .max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))
                .unwrap();
            for k in 0..p {
                a.swap([col, k], [piv, k]);
            }
            b.swap(col, piv);
            for row in col + 1..p {
                let f = a[[row, col]] / a[[col, col]];
                for k in col..p {
                    a[[row, k]] -= f * a[[col, k]];
                }
                b[row] -= f * b[col];
            }
        }
        let mut sol = Array1::zeros(p);
        for row in (0..p).rev() {
            let s: f64 = (row + 1..p).map(|k| a[[row, k]] * sol[k]).sum();
            sol[row] = (b[row] - s) / a[[row, row]];
        }
        sol
    }

    #[test]
    fn zero_response_gives_zero_coefficients() {
        let x = random_matrix(30, 5, 1);
        let y = Array1::zeros(30);
        let problem = LassoProblem::standard(x.view(), y.view()).unwrap();
        for lambda in [1e-4, 0.1, 10.0] {
            let fit = solve_lasso(&problem, lambda, None).unwrap();
            assert!(fit.coefficients.iter().all(|&b| b == 0.0));
        }
        let path = lambda_path(&problem, 5, 0.1).unwrap();
        assert_eq!(path[0], 1.0);
    }

    #[test]
    fn single_column_soft_threshold() {
        // x'x/n = 1, x'y/n = 1, lambda = 0.4 -> b = 1 - lambda/2 = 0.8.
        let x = array![[1.0], [-1.0], [1.0], [-1.0]];
        let y = array![1.0, -1.0, 1.0, -1.0];
        let problem = LassoProblem::standard(x.view(), y.view()).unwrap();
        let fit = solve_lasso(&problem, 0.4, None).unwrap();
        assert!((fit.coefficients[0] - 0.8).abs() < 1e-12);
        assert!(fit.converged);
    }

    #[test]
    fn unpenalized_fit_is_least_squares() {
        let x = random_matrix(50, 3, 7);
        let truth = array![1.0, -2.0, 0.5];
        let noise = random_matrix(50, 1, 8).column(0).to_owned() * 0.3;
        let y = x.dot(&truth) + noise;
        let problem = LassoProblem::new(x.view(), y.view(), Array1::zeros(3)).unwrap();
        let fit = solve_lasso(&problem, 0.7, None).unwrap();
        let oracle = ols(&x, &y);
        for j in 0..3 {
            assert!((fit.coefficients[j] - oracle[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn lambda_path_shape() {
        // Orthonormal column with x'y/n = 1 -> lambda_max = 2.
        let x = array![[1.0], [1.0], [1.0], [1.0]];
        let y = array![1.0, 1.0, 1.0, 1.0];
        let problem = LassoProblem::standard(x.view(), y.view()).unwrap();
        let path = lambda_path(&problem, 3, 0.01).unwrap();
        assert!((path[0] - 2.0).abs() < 1e-15);
        assert!((path[1] - 0.2).abs() < 1e-15);
        assert!((path[2] - 0.02).abs() < 1e-15);
        let at_max = solve_lasso(&problem, path[0], None).unwrap();
        assert_eq!(at_max.coefficients[0], 0.0);
    }

    #[test]
    fn lambda_max_zeroes_penalized_columns() {
        let x = random_matrix(40, 6, 3);
        let y = x.column(0).to_owned() * 2.0 + x.column(3);
        let mut factors = Array1::ones(6);
        factors[0] = 0.0;
        let problem = LassoProblem::new(x.view(), y.view(), factors).unwrap();
        let path = lambda_path(&problem, 10, 0.01).unwrap();
        let fit = solve_lasso(&problem, path[0], None).unwrap();
        assert!(fit.coefficients.iter().skip(1).all(|&b| b == 0.0));
        assert!(fit.coefficients[0] != 0.0);
        let below = solve_lasso(&problem, path[0] * 0.95, None).unwrap();
        assert!(below.coefficients.iter().skip(1).any(|&b| b != 0.0));
    }

    #[test]
    fn path_errors() {
        let x = random_matrix(10, 2, 1);
        let y = Array1::ones(10);
        let unpen = LassoProblem::new(x.view(), y.view(), Array1::zeros(2)).unwrap();
        assert!(matches!(
            lambda_path(&unpen, 10, 0.1),
            Err(HdivError::LassoPath(_))
        ));
        let pen = LassoProblem::standard(x.view(), y.view()).unwrap();
        assert!(lambda_path(&pen, 1, 0.1).is_err());
        assert!(lambda_path(&pen, 5, 1.5).is_err());
        assert!(solve_lasso(&pen, 0.0, None).is_err());
    }

    #[test]
    fn folds_are_balanced_and_seeded() {
        let folds = fold_assignment(23, 5, 11).unwrap();
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert_eq!(folds, fold_assignment(23, 5, 11).unwrap());
        assert!(fold_assignment(3, 5, 0).is_err());
        assert!(fold_assignment(10, 1, 0).is_err());
    }

    #[test]
    fn cv_on_pure_noise_obeys_one_se_rule() {
        let x = random_matrix(60, 8, 21);
        let y = random_matrix(60, 1, 22).column(0).to_owned();
        let problem = LassoProblem::standard(x.view(), y.view()).unwrap();
        let cv = cv_select(&problem, &LassoConfig::default(), 5).unwrap();
        assert!(cv.lambda_1se >= cv.lambda_min);
        assert!(cv.cv_mean_error[cv.index_1se] <= cv.cv_mean_error[cv.index_min] + cv.cv_se[cv.index_min]);
        let again = cv_select(&problem, &LassoConfig::default(), 5).unwrap();
        assert_eq!(cv, again);
    }

    #[test]
    fn cv_finds_strong_predictor() {
        let x = random_matrix(200, 10, 31);
        let noise = random_matrix(200, 1, 32).column(0).to_owned() * 0.1;
        let y = x.column(4).to_owned() * 5.0 + noise;
        let problem = LassoProblem::standard(x.view(), y.view()).unwrap();
        let cv = cv_select(&problem, &LassoConfig::default(), 1).unwrap();
        assert!(cv.chosen_fit.active_set().contains(&4));
        assert!(cv.chosen_fit.kkt_max_violation < 1e-6);
    }

    #[test]
    fn held_out_moments_match_direct_computation() {
        let x = random_matrix(20, 4, 2);
        let y = random_matrix(20, 1, 3).column(0).to_owned();
        let full = Moments::of(x.view(), y.view());
        let held = vec![1, 5, 9, 17];
        let keep: Vec<usize> = (0..20).filter(|i| !held.contains(i)).collect();
        let direct = Moments::of(x.select(Axis(0), &keep).view(), y.select(Axis(0), &keep).view());
        let derived = full.without_rows(20, x.view(), y.view(), &held);
        for (a, b) in direct.gram.iter().zip(derived.gram.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in direct.cross.iter().zip(derived.cross.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
