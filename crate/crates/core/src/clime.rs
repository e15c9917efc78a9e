//! Constrained L1-minimization (CLIME) estimate of a precision matrix.
//!
//! Column `j` solves
//!
//! ```text
//! min ||w||_1   s.t.   ||S w - e_j||_inf <= mu
//! ```
//!
//! as a linear program in `w = w+ - w-`, and the column solutions are then
//! symmetrized by keeping, for each pair `(j, k)`, the entry of smaller
//! magnitude.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::data::GramMatrix;
use crate::error::{HdivError, Result};
use crate::simplex::{self, ConstraintMatrix, SimplexOptions};

/// Smallest tuning value handed to the LP.
pub const MU_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionEstimate {
    omega: Array2<f64>,
    raw: Array2<f64>,
    mu: f64,
    feasibility_gap: f64,
}

impl PrecisionEstimate {
    /// The symmetrized estimate.
    pub fn omega(&self) -> ArrayView2<'_, f64> {
        self.omega.view()
    }

    /// Column solutions before symmetrization.
    pub fn raw(&self) -> ArrayView2<'_, f64> {
        self.raw.view()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// `max_j ||S w_j - e_j||_inf` over the unsymmetrized columns.
    pub fn feasibility_gap(&self) -> f64 {
        self.feasibility_gap
    }

    /// The last `p_z` rows, i.e. the instrument block.
    pub fn instrument_rows(&self, p_z: usize) -> ArrayView2<'_, f64> {
        let p = self.omega.nrows();
        self.omega.slice(s![p - p_z.., ..])
    }

    /// Wraps a given symmetric matrix (used when the precision is known).
    pub fn from_matrix(omega: Array2<f64>) -> Self {
        Self {
            raw: omega.clone(),
            omega,
            mu: 0.0,
            feasibility_gap: 0.0,
        }
    }
}

/// `C * sqrt(ln p / n)`, floored at [`MU_FLOOR`].
pub fn default_mu(n: usize, p: usize, c_omega: f64) -> f64 {
    let raw = c_omega * ((p as f64).ln() / n as f64).sqrt();
    raw.max(MU_FLOOR)
}

/// The CLIME constraint block `[S -S; -S S]` over `(w+, w-)`.
struct ClimeConstraints<'a> {
    sigma: ArrayView2<'a, f64>,
}

impl ClimeConstraints<'_> {
    fn split(&self, k: usize) -> (usize, f64) {
        let p = self.sigma.nrows();
        if k < p {
            (k, 1.0)
        } else {
            (k - p, -1.0)
        }
    }

    fn mirror(&self, v: Array1<f64>, out: &mut Array1<f64>) {
        let p = self.sigma.nrows();
        out.slice_mut(s![p..]).assign(&(-&v));
        out.slice_mut(s![..p]).assign(&v);
    }
}

impl ConstraintMatrix for ClimeConstraints<'_> {
    fn rows(&self) -> usize {
        2 * self.sigma.nrows()
    }

    fn cols(&self) -> usize {
        2 * self.sigma.nrows()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        let (r, si) = self.split(i);
        let (c, sj) = self.split(j);
        si * sj * self.sigma[[r, c]]
    }

    fn row_combination(&self, rows: &[usize], weights: &[f64], out: &mut Array1<f64>) {
        let mut v = Array1::zeros(self.sigma.nrows());
        for (&i, &w) in rows.iter().zip(weights) {
            let (r, si) = self.split(i);
            v.scaled_add(si * w, &self.sigma.row(r));
        }
        self.mirror(v, out);
    }

    fn column_combination(&self, cols: &[usize], weights: &[f64], out: &mut Array1<f64>) {
        let mut v = Array1::zeros(self.sigma.nrows());
        for (&j, &w) in cols.iter().zip(weights) {
            let (c, sj) = self.split(j);
            v.scaled_add(sj * w, &self.sigma.column(c));
        }
        self.mirror(v, out);
    }
}

/// Solves the CLIME linear program for column `j`.
pub fn clime_column(sigma_hat: &GramMatrix, j: usize, mu: f64) -> Result<Array1<f64>> {
    let p = sigma_hat.dim();
    if j >= p {
        return Err(HdivError::Dimension(format!(
            "column {j} out of range for p = {p}"
        )));
    }
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(HdivError::Config(format!(
            "CLIME tuning value must be positive, got {mu}"
        )));
    }
    if mu >= 1.0 {
        // The zero vector is feasible and has zero norm.
        return Ok(Array1::zeros(p));
    }
    let constraints = ClimeConstraints {
        sigma: sigma_hat.matrix(),
    };
    let mut b = Array1::from_elem(2 * p, mu);
    b[j] += 1.0;
    b[p + j] -= 1.0;
    let c = Array1::ones(2 * p);
    let sol = simplex::solve(&constraints, b.view(), c.view(), &SimplexOptions::default()).map_err(|e| {
        HdivError::Solver {
            column: j,
            message: e.to_string(),
        }
    })?;
    let omega = &sol.x.slice(s![..p]) - &sol.x.slice(s![p..]);
    Ok(omega)
}

fn column_gap(sigma: ArrayView2<'_, f64>, j: usize, w: ArrayView1<'_, f64>) -> f64 {
    let mut r = sigma.dot(&w);
    r[j] -= 1.0;
    r.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Keeps the smaller-magnitude entry of each `(j, k)`, `(k, j)` pair.
pub fn symmetrize_min_magnitude(raw: ArrayView2<'_, f64>) -> Array2<f64> {
    let p = raw.nrows();
    let mut out = Array2::zeros((p, p));
    for j in 0..p {
        out[[j, j]] = raw[[j, j]];
        for k in j + 1..p {
            let (a, b) = (raw[[j, k]], raw[[k, j]]);
            let keep = if a.abs() <= b.abs() { a } else { b };
            out[[j, k]] = keep;
            out[[k, j]] = keep;
        }
    }
    out
}

pub fn clime(sigma_hat: &GramMatrix, mu: f64) -> Result<PrecisionEstimate> {
    let p = sigma_hat.dim();
    let columns: Vec<Array1<f64>> = (0..p)
        .into_par_iter()
        .map(|j| clime_column(sigma_hat, j, mu))
        .collect::<Result<_>>()?;
    let mut raw = Array2::zeros((p, p));
    let mut gap = 0.0f64;
    for (j, col) in columns.iter().enumerate() {
        raw.column_mut(j).assign(col);
        gap = gap.max(column_gap(sigma_hat.matrix(), j, col.view()));
    }
    let omega = symmetrize_min_magnitude(raw.view());
    Ok(PrecisionEstimate {
        omega,
        raw,
        mu,
        feasibility_gap: gap,
    })
}
