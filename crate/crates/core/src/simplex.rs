//! Revised dual simplex for `min c'x  s.t.  A x <= b, x >= 0` with
//! `c >= 0`.
//!
//! Non-negative costs make the all-slack basis dual feasible, so no phase one
//! is needed: the dual simplex starts there and pivots out primal
//! infeasibilities until the basis is optimal or the problem is shown
//! infeasible.
//!
//! The basis is stored in partitioned form. If `S` is the set of basic
//! structural columns and `T` the set of rows whose slack is nonbasic, then
//! `|S| = |T| = k` and every basis solve reduces to the `k x k` block
//! `K = A[T, S]`. Only `K^-1` is kept, updated per pivot and refactored
//! periodically, so a pivot costs `O(k (m + n))` rather than `O(m^2)`.
//!
//! Pivoting is deterministic. The leaving variable is the most infeasible one
//! and ratio-test ties go to the larger pivot, then the lower index. After a
//! run of degenerate pivots the solver switches to Bland's rule (lowest-index
//! leaving variable, lowest-index entering variable), which cannot cycle.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

/// Access to the structural constraint matrix `A` (`m x n`).
pub trait ConstraintMatrix {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn entry(&self, i: usize, j: usize) -> f64;
    /// `sum_t w_t A[rows_t, .]`, written into `out` (length `n`).
    fn row_combination(&self, rows: &[usize], weights: &[f64], out: &mut Array1<f64>);
    /// `sum_t w_t A[., cols_t]`, written into `out` (length `m`).
    fn column_combination(&self, cols: &[usize], weights: &[f64], out: &mut Array1<f64>);
}

impl ConstraintMatrix for ArrayView2<'_, f64> {
    fn rows(&self) -> usize {
        self.nrows()
    }

    fn cols(&self) -> usize {
        self.ncols()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        self[[i, j]]
    }

    fn row_combination(&self, rows: &[usize], weights: &[f64], out: &mut Array1<f64>) {
        out.fill(0.0);
        for (&r, &w) in rows.iter().zip(weights) {
            out.scaled_add(w, &self.row(r));
        }
    }

    fn column_combination(&self, cols: &[usize], weights: &[f64], out: &mut Array1<f64>) {
        out.fill(0.0);
        for (&c, &w) in cols.iter().zip(weights) {
            out.scaled_add(w, &self.column(c));
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub feasibility_tol: f64,
    pub pivot_tol: f64,
    pub max_iterations: usize,
    pub refactor_every: usize,
    /// Consecutive degenerate pivots tolerated before switching to Bland's
    /// rule.
    pub degenerate_limit: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-11,
            pivot_tol: 1e-10,
            max_iterations: 50_000,
            refactor_every: 100,
            degenerate_limit: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimplexError {
    Infeasible { row: usize },
    IterationLimit(usize),
    SingularBasis,
}

impl std::fmt::Display for SimplexError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SimplexError::Infeasible { row } => write!(f, "infeasible (row {row} cannot be repaired)"),
            SimplexError::IterationLimit(n) => write!(f, "iteration limit of {n} pivots reached"),
            SimplexError::SingularBasis => write!(f, "basis became numerically singular"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexSolution {
    pub x: Array1<f64>,
    pub objective: f64,
    /// Dual values `y <= 0` for the `<=` rows; `b'y` equals the objective at
    /// optimality.
    pub duals: Array1<f64>,
    pub iterations: usize,
    pub used_bland: bool,
}

/// A basic variable that may leave.
#[derive(Debug, Clone, Copy)]
enum Leaving {
    /// Position in `S`.
    Structural(usize),
    /// Row index whose slack is basic.
    Slack(usize),
}

/// A nonbasic variable that may enter.
#[derive(Debug, Clone, Copy)]
enum Entering {
    Structural(usize),
    /// Position in `T`.
    Slack(usize),
}

struct State<'a, M: ConstraintMatrix> {
    a: &'a M,
    b: ArrayView1<'a, f64>,
    c: ArrayView1<'a, f64>,
    m: usize,
    n: usize,
    /// Basic structural columns.
    s: Vec<usize>,
    /// Rows with a nonbasic slack.
    t: Vec<usize>,
    in_s: Vec<bool>,
    in_t: Vec<bool>,
    /// `A[T, S]^-1`: rows follow `S`, columns follow `T`.
    kinv: Array2<f64>,
    /// Basic structural values, aligned with `S`.
    x_s: Array1<f64>,
    /// Slack values `b - A x` for all rows (zero on `T`).
    slack: Array1<f64>,
    /// Row duals aligned with `T`.
    y_t: Array1<f64>,
    /// Reduced costs of the structural columns.
    d: Array1<f64>,
    work_m: Array1<f64>,
}

impl<'a, M: ConstraintMatrix> State<'a, M> {
    fn new(a: &'a M, b: ArrayView1<'a, f64>, c: ArrayView1<'a, f64>) -> Self {
        let (m, n) = (a.rows(), a.cols());
        Self {
            a,
            b,
            c,
            m,
            n,
            s: Vec::new(),
            t: Vec::new(),
            in_s: vec![false; n],
            in_t: vec![false; m],
            kinv: Array2::zeros((0, 0)),
            x_s: Array1::zeros(0),
            slack: b.to_owned(),
            y_t: Array1::zeros(0),
            d: c.to_owned(),
            work_m: Array1::zeros(m),
        }
    }

    fn k(&self) -> usize {
        self.s.len()
    }

    /// Recomputes primal values, duals and reduced costs from `K^-1`.
    fn recompute(&mut self) {
        let b_t: Array1<f64> = self.t.iter().map(|&i| self.b[i]).collect();
        self.x_s = self.kinv.dot(&b_t);
        self.a.column_combination(
            &self.s,
            self.x_s.as_slice().expect("contiguous"),
            &mut self.work_m,
        );
        self.slack = &self.b - &self.work_m;
        for &i in &self.t {
            self.slack[i] = 0.0;
        }
        let c_s: Array1<f64> = self.s.iter().map(|&j| self.c[j]).collect();
        self.y_t = self.kinv.t().dot(&c_s);
        let mut aty = Array1::zeros(self.n);
        self.a
            .row_combination(&self.t, self.y_t.as_slice().expect("contiguous"), &mut aty);
        self.d = &self.c - &aty;
        for &j in &self.s {
            self.d[j] = 0.0;
        }
    }

    /// Rebuilds `K^-1` from the basis itself.
    fn refactor(&mut self) -> Result<(), SimplexError> {
        let k = self.k();
        let kmat = Array2::from_shape_fn((k, k), |(r, c)| self.a.entry(self.t[r], self.s[c]));
        self.kinv = invert(kmat).ok_or(SimplexError::SingularBasis)?;
        self.recompute();
        Ok(())
    }

    /// Slack dual for the row at position `pos` in `T` is `-y`.
    fn slack_cost(&self, pos: usize) -> f64 {
        -self.y_t[pos]
    }

    /// Variable index used for tie-breaking: structural `j`, slack `n + i`.
    fn leaving_index(&self, l: Leaving) -> usize {
        match l {
            Leaving::Structural(a) => self.s[a],
            Leaving::Slack(i) => self.n + i,
        }
    }

    fn entering_index(&self, e: Entering) -> usize {
        match e {
            Entering::Structural(j) => j,
            Entering::Slack(b) => self.n + self.t[b],
        }
    }

    fn leaving_value(&self, l: Leaving) -> f64 {
        match l {
            Leaving::Structural(a) => self.x_s[a],
            Leaving::Slack(i) => self.slack[i],
        }
    }

    /// The pivot row restricted to nonbasic variables: structural entries in
    /// `alpha_struct` (length `n`) and slack entries in `alpha_slack`
    /// (aligned with `T`).
    fn pivot_row(&self, l: Leaving, alpha_struct: &mut Array1<f64>) -> Array1<f64> {
        match l {
            Leaving::Structural(a) => {
                let rho = self.kinv.row(a).to_owned();
                self.a
                    .row_combination(&self.t, rho.as_slice().expect("contiguous"), alpha_struct);
                rho
            }
            Leaving::Slack(i) => {
                // rho = e_i - (A[i, S] K^-1) on T.
                let r: Array1<f64> = self.s.iter().map(|&j| self.a.entry(i, j)).collect();
                let w = r.dot(&self.kinv);
                let neg: Vec<f64> = w.iter().map(|v| -v).collect();
                self.a.row_combination(&self.t, &neg, alpha_struct);
                let mut row_i = Array1::zeros(self.n);
                self.a.row_combination(&[i], &[1.0], &mut row_i);
                *alpha_struct += &row_i;
                -w
            }
        }
    }

    fn apply_pivot(&mut self, l: Leaving, e: Entering) -> Result<(), SimplexError> {
        let k = self.k();
        match (l, e) {
            (Leaving::Structural(a), Entering::Structural(j)) => {
                let g: Array1<f64> = self.t.iter().map(|&i| self.a.entry(i, j)).collect();
                let h = self.kinv.dot(&g);
                if h[a].abs() < 1e-300 {
                    return Err(SimplexError::SingularBasis);
                }
                let row_a = self.kinv.row(a).to_owned() / h[a];
                for c in 0..k {
                    if c != a && h[c] != 0.0 {
                        self.kinv.row_mut(c).scaled_add(-h[c], &row_a);
                    }
                }
                self.kinv.row_mut(a).assign(&row_a);
                self.in_s[self.s[a]] = false;
                self.s[a] = j;
                self.in_s[j] = true;
            }
            (Leaving::Slack(i), Entering::Slack(b)) => {
                let r: Array1<f64> = self.s.iter().map(|&j| self.a.entry(i, j)).collect();
                let mut z = r.dot(&self.kinv);
                let denom = z[b];
                if denom.abs() < 1e-300 {
                    return Err(SimplexError::SingularBasis);
                }
                z[b] -= 1.0;
                let col_b = self.kinv.column(b).to_owned();
                for rr in 0..k {
                    let f = col_b[rr] / denom;
                    if f != 0.0 {
                        self.kinv.row_mut(rr).scaled_add(-f, &z);
                    }
                }
                self.in_t[self.t[b]] = false;
                self.t[b] = i;
                self.in_t[i] = true;
            }
            (Leaving::Structural(a), Entering::Slack(b)) => {
                let piv = self.kinv[[a, b]];
                if piv.abs() < 1e-300 {
                    return Err(SimplexError::SingularBasis);
                }
                let mut next = Array2::zeros((k - 1, k - 1));
                for (r2, r) in (0..k).filter(|&r| r != a).enumerate() {
                    for (c2, c) in (0..k).filter(|&c| c != b).enumerate() {
                        next[[r2, c2]] = self.kinv[[r, c]] - self.kinv[[r, b]] * self.kinv[[a, c]] / piv;
                    }
                }
                self.kinv = next;
                self.in_s[self.s[a]] = false;
                self.s.remove(a);
                self.in_t[self.t[b]] = false;
                self.t.remove(b);
            }
            (Leaving::Slack(i), Entering::Structural(j)) => {
                let g: Array1<f64> = self.t.iter().map(|&row| self.a.entry(row, j)).collect();
                let r: Array1<f64> = self.s.iter().map(|&col| self.a.entry(i, col)).collect();
                let mg = self.kinv.dot(&g);
                let rm = r.dot(&self.kinv);
                let schur = self.a.entry(i, j) - r.dot(&mg);
                if schur.abs() < 1e-300 {
                    return Err(SimplexError::SingularBasis);
                }
                let mut next = Array2::zeros((k + 1, k + 1));
                {
                    let mut top = next.slice_mut(s![..k, ..k]);
                    top.assign(&self.kinv);
                    for rr in 0..k {
                        let f = mg[rr] / schur;
                        if f != 0.0 {
                            top.row_mut(rr).scaled_add(f, &rm);
                        }
                    }
                }
                for rr in 0..k {
                    next[[rr, k]] = -mg[rr] / schur;
                    next[[k, rr]] = -rm[rr] / schur;
                }
                next[[k, k]] = 1.0 / schur;
                self.kinv = next;
                self.s.push(j);
                self.in_s[j] = true;
                self.t.push(i);
                self.in_t[i] = true;
            }
        }
        Ok(())
    }

    fn full_duals(&self) -> Array1<f64> {
        let mut y = Array1::zeros(self.m);
        for (pos, &i) in self.t.iter().enumerate() {
            y[i] = self.y_t[pos];
        }
        y
    }
}

/// Gauss-Jordan inverse with partial pivoting.
fn invert(mut a: Array2<f64>) -> Option<Array2<f64>> {
    let m = a.nrows();
    let mut inv = Array2::eye(m);
    for col in 0..m {
        let piv = (col..m).max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))?;
        if a[[piv, col]].abs() < 1e-14 {
            return None;
        }
        if piv != col {
            for k in 0..m {
                a.swap([col, k], [piv, k]);
                inv.swap([col, k], [piv, k]);
            }
        }
        let scale = 1.0 / a[[col, col]];
        a.row_mut(col).mapv_inplace(|v| v * scale);
        inv.row_mut(col).mapv_inplace(|v| v * scale);
        let arow = a.row(col).to_owned();
        let irow = inv.row(col).to_owned();
        for row in 0..m {
            if row != col {
                let f = a[[row, col]];
                if f != 0.0 {
                    a.row_mut(row).scaled_add(-f, &arow);
                    inv.row_mut(row).scaled_add(-f, &irow);
                }
            }
        }
    }
    Some(inv)
}

/// Solves `min c'x s.t. A x <= b, x >= 0` for `c >= 0`.
pub fn solve<M: ConstraintMatrix>(
    a: &M,
    b: ArrayView1<'_, f64>,
    c: ArrayView1<'_, f64>,
    options: &SimplexOptions,
) -> Result<SimplexSolution, SimplexError> {
    assert_eq!(b.len(), a.rows());
    assert_eq!(c.len(), a.cols());
    assert!(c.iter().all(|&v| v >= 0.0), "dual simplex start needs c >= 0");

    let mut st = State::new(a, b, c);
    let (m, n) = (st.m, st.n);
    let mut alpha_struct = Array1::zeros(n);
    let mut iterations = 0;
    let mut since_refactor = 0;
    let mut degenerate_run = 0;
    let mut bland = false;
    let tol = options.feasibility_tol;

    loop {
        // Leaving variable: most negative basic value (lowest index under
        // Bland's rule). Ties go to the lower variable index.
        let candidates = (0..st.k())
            .filter(|&a| st.x_s[a] < -tol)
            .map(Leaving::Structural)
            .chain(
                (0..m)
                    .filter(|&i| !st.in_t[i] && st.slack[i] < -tol)
                    .map(Leaving::Slack),
            );
        let leave = candidates.fold(None, |best: Option<Leaving>, cand| match best {
            None => Some(cand),
            Some(cur) => {
                let (vc, vb) = (st.leaving_value(cand), st.leaving_value(cur));
                let (ic, ib) = (st.leaving_index(cand), st.leaving_index(cur));
                let better = if bland {
                    ic < ib
                } else {
                    vc < vb || (vc == vb && ic < ib)
                };
                Some(if better { cand } else { cur })
            }
        });
        let Some(l) = leave else {
            if since_refactor > 0 {
                // Confirm optimality on a fresh factorization.
                st.refactor()?;
                since_refactor = 0;
                continue;
            }
            break;
        };
        if iterations >= options.max_iterations {
            return Err(SimplexError::IterationLimit(iterations));
        }

        let alpha_slack = st.pivot_row(l, &mut alpha_struct);

        // Dual ratio test over nonbasic variables with a negative pivot-row
        // entry.
        let mut enter: Option<(Entering, f64, f64)> = None;
        let mut consider = |e: Entering, aj: f64, dj: f64, st: &State<'_, M>| {
            if aj >= -options.pivot_tol {
                return;
            }
            let ratio = dj.max(0.0) / -aj;
            enter = match enter {
                None => Some((e, ratio, aj.abs())),
                Some((cur, best, mag)) => {
                    let tie = (ratio - best).abs() <= 1e-12 * (1.0 + best);
                    let lower = st.entering_index(e) < st.entering_index(cur);
                    if !tie && ratio < best {
                        Some((e, ratio, aj.abs()))
                    } else if tie && ((!bland && aj.abs() > mag) || ((bland || aj.abs() == mag) && lower)) {
                        Some((e, ratio.min(best), aj.abs()))
                    } else {
                        Some((cur, best, mag))
                    }
                }
            };
        };
        for j in 0..n {
            if !st.in_s[j] {
                consider(Entering::Structural(j), alpha_struct[j], st.d[j], &st);
            }
        }
        for (pos, &aj) in alpha_slack.iter().enumerate() {
            consider(Entering::Slack(pos), aj, st.slack_cost(pos), &st);
        }

        let Some((e, ratio, _)) = enter else {
            if since_refactor > 0 {
                st.refactor()?;
                since_refactor = 0;
                continue;
            }
            let row = match l {
                Leaving::Structural(a) => st.t.get(a).copied().unwrap_or(0),
                Leaving::Slack(i) => i,
            };
            return Err(SimplexError::Infeasible { row });
        };

        if ratio <= 1e-14 {
            degenerate_run += 1;
            if degenerate_run > options.degenerate_limit {
                bland = true;
            }
        } else {
            degenerate_run = 0;
        }

        st.apply_pivot(l, e)?;
        iterations += 1;
        since_refactor += 1;
        if since_refactor >= options.refactor_every {
            st.refactor()?;
            since_refactor = 0;
        } else {
            st.recompute();
        }
    }

    let mut x = Array1::zeros(n);
    for (pos, &j) in st.s.iter().enumerate() {
        x[j] = st.x_s[pos].max(0.0);
    }
    let objective = x.dot(&st.c);
    Ok(SimplexSolution {
        x,
        objective,
        duals: st.full_duals(),
        iterations,
        used_bland: bland,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn minilp_oracle(a: &Array2<f64>, b: &Array1<f64>, c: &Array1<f64>) -> Option<f64> {
        use minilp::{ComparisonOp, OptimizationDirection, Problem};
        let mut problem = Problem::new(OptimizationDirection::Minimize);
        let vars: Vec<_> = c
            .iter()
            .map(|&ci| problem.add_var(ci, (0.0, f64::INFINITY)))
            .collect();
        for (i, row) in a.outer_iter().enumerate() {
            let terms: Vec<_> = vars.iter().zip(row.iter()).map(|(&v, &w)| (v, w)).collect();
            problem.add_constraint(terms.as_slice(), ComparisonOp::Le, b[i]);
        }
        problem.solve().ok().map(|s| s.objective())
    }

    #[test]
    fn trivially_feasible_start_is_optimal() {
        let a = array![[1.0, 2.0], [3.0, 1.0]];
        let b = array![4.0, 5.0];
        let c = array![1.0, 1.0];
        let sol = solve(&a.view(), b.view(), c.view(), &SimplexOptions::default()).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.x, array![0.0, 0.0]);
    }

    #[test]
    fn small_covering_problem() {
        // min x + 2y  s.t. x + y >= 1, x - y <= 0.5  ->  x = 0.75, y = 0.25.
        let a = array![[-1.0, -1.0], [1.0, -1.0]];
        let b = array![-1.0, 0.5];
        let c = array![1.0, 2.0];
        let sol = solve(&a.view(), b.view(), c.view(), &SimplexOptions::default()).unwrap();
        assert!((sol.x[0] - 0.75).abs() < 1e-12);
        assert!((sol.x[1] - 0.25).abs() < 1e-12);
        assert!((sol.objective - 1.25).abs() < 1e-12);
        assert!((sol.duals.dot(&b) - sol.objective).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasibility() {
        // x >= 2 and x <= 1.
        let a = array![[-1.0], [1.0]];
        let b = array![-2.0, 1.0];
        let c = array![1.0];
        let err = solve(&a.view(), b.view(), c.view(), &SimplexOptions::default()).unwrap_err();
        assert!(matches!(err, SimplexError::Infeasible { .. }));
    }

    #[test]
    fn agrees_with_generic_lp_solver() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..40 {
            let m = rng.random_range(2..8);
            let n = rng.random_range(2..8);
            let a = Array2::from_shape_fn((m, n), |_| rng.random_range(-2.0..2.0));
            let b = Array1::from_shape_fn(m, |_| rng.random_range(-1.0..2.0));
            let c = Array1::from_shape_fn(n, |_| rng.random_range(0.1..3.0));
            let ours = solve(&a.view(), b.view(), c.view(), &SimplexOptions::default());
            match (ours, minilp_oracle(&a, &b, &c)) {
                (Ok(sol), Some(obj)) => {
                    assert!((sol.objective - obj).abs() < 1e-8 * (1.0 + obj.abs()));
                    let slack = &b - &a.dot(&sol.x);
                    assert!(slack.iter().all(|&s| s > -1e-9));
                }
                (Err(SimplexError::Infeasible { .. }), None) => {}
                (ours, theirs) => panic!("disagreement: {ours:?} vs {theirs:?}"),
            }
        }
    }

    #[test]
    fn bland_rule_reaches_same_optimum() {
        let a = array![[-1.0, -1.0, 0.0], [0.0, -1.0, -1.0], [-1.0, 0.0, -1.0]];
        let b = array![-1.0, -1.0, -1.0];
        let c = array![1.0, 1.0, 1.0];
        let opts = SimplexOptions {
            degenerate_limit: 0,
            ..SimplexOptions::default()
        };
        let sol = solve(&a.view(), b.view(), c.view(), &opts).unwrap();
        assert!((sol.objective - 1.5).abs() < 1e-12);
    }
}
