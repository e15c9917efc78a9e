//! Dataset representation, instrument weighting and shared Gram utilities.
//!
//! A [`Dataset`] holds the outcome `Y`, the endogenous treatment `D` and the
//! exogenous design `W = [X, Z]` (covariates first, instruments last). Every
//! downstream estimator works on `W` directly, so it is stored concatenated.

use std::collections::HashSet;
use std::io::Read;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{HdivError, Result};

/// Column labels for every variable in a [`Dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnNames {
    pub outcome: String,
    pub treatment: String,
    pub covariates: Vec<String>,
    pub instruments: Vec<String>,
}

impl ColumnNames {
    fn generic(p_x: usize, p_z: usize) -> Self {
        Self {
            outcome: "Y".into(),
            treatment: "D".into(),
            covariates: (1..=p_x).map(|j| format!("X{j}")).collect(),
            instruments: (1..=p_z).map(|j| format!("Z{j}")).collect(),
        }
    }

    /// Labels of the columns of `W`, in order.
    pub fn design(&self) -> impl Iterator<Item = &str> {
        self.covariates
            .iter()
            .chain(self.instruments.iter())
            .map(String::as_str)
    }
}

/// Location/scale of every column before standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub outcome: (f64, f64),
    pub treatment: (f64, f64),
    /// `(mean, sd)` for each column of `W`.
    pub design: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    y: Array1<f64>,
    d: Array1<f64>,
    w: Array2<f64>,
    p_x: usize,
    names: ColumnNames,
    penalty_exempt: Vec<bool>,
    scaling: Option<Scaling>,
}

impl Dataset {
    /// Builds a dataset with generic column names and no penalty exemptions.
    pub fn new(y: Array1<f64>, d: Array1<f64>, x: Array2<f64>, z: Array2<f64>) -> Result<Self> {
        let names = ColumnNames::generic(x.ncols(), z.ncols());
        Self::with_names(y, d, x, z, names)
    }

    pub fn with_names(
        y: Array1<f64>,
        d: Array1<f64>,
        x: Array2<f64>,
        z: Array2<f64>,
        names: ColumnNames,
    ) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(HdivError::Config(format!(
                "at least two observations are required, got {n}"
            )));
        }
        if d.len() != n || x.nrows() != n || z.nrows() != n {
            return Err(HdivError::Dimension(format!(
                "row counts differ: Y={n}, D={}, X={}, Z={}",
                d.len(),
                x.nrows(),
                z.nrows()
            )));
        }
        if names.covariates.len() != x.ncols() || names.instruments.len() != z.ncols() {
            return Err(HdivError::Dimension(
                "column names do not match the covariate/instrument blocks".into(),
            ));
        }
        if z.ncols() < 2 {
            return Err(HdivError::Config(format!(
                "overidentification needs at least two instruments, got {}",
                z.ncols()
            )));
        }
        check_finite(y.view().into_dyn(), &names.outcome)?;
        check_finite(d.view().into_dyn(), &names.treatment)?;
        check_finite(x.view().into_dyn(), "X")?;
        check_finite(z.view().into_dyn(), "Z")?;
        for (j, col) in z.axis_iter(Axis(1)).enumerate() {
            if col.iter().all(|&v| v == 0.0) {
                return Err(HdivError::DegenerateInstrument(names.instruments[j].clone()));
            }
        }

        let p_x = x.ncols();
        let w = ndarray::concatenate(Axis(1), &[x.view(), z.view()])
            .map_err(|e| HdivError::Dimension(e.to_string()))?;
        let p = w.ncols();
        Ok(Self {
            y,
            d,
            w,
            p_x,
            names,
            penalty_exempt: vec![false; p],
            scaling: None,
        })
    }

    /// Marks columns of `W` that the Lasso fits leave unpenalized.
    pub fn with_penalty_exempt(mut self, exempt: Vec<bool>) -> Result<Self> {
        if exempt.len() != self.p() {
            return Err(HdivError::Dimension(format!(
                "penalty exemption flags: expected {}, got {}",
                self.p(),
                exempt.len()
            )));
        }
        self.penalty_exempt = exempt;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p_x(&self) -> usize {
        self.p_x
    }

    pub fn p_z(&self) -> usize {
        self.w.ncols() - self.p_x
    }

    pub fn p(&self) -> usize {
        self.w.ncols()
    }

    pub fn y(&self) -> ArrayView1<'_, f64> {
        self.y.view()
    }

    pub fn d(&self) -> ArrayView1<'_, f64> {
        self.d.view()
    }

    /// The full exogenous design `[X, Z]`.
    pub fn w(&self) -> ArrayView2<'_, f64> {
        self.w.view()
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.w.slice(s![.., ..self.p_x])
    }

    pub fn z(&self) -> ArrayView2<'_, f64> {
        self.w.slice(s![.., self.p_x..])
    }

    pub fn names(&self) -> &ColumnNames {
        &self.names
    }

    pub fn penalty_exempt(&self) -> &[bool] {
        &self.penalty_exempt
    }

    /// Lasso penalty multipliers for the columns of `W` (0 for exempt columns).
    pub fn penalty_factors(&self) -> Array1<f64> {
        self.penalty_exempt
            .iter()
            .map(|&e| if e { 0.0 } else { 1.0 })
            .collect()
    }

    /// Original location and scale, present once [`standardize`] has run.
    pub fn scaling(&self) -> Option<&Scaling> {
        self.scaling.as_ref()
    }

    pub fn weight_matrix(&self) -> Result<WeightDiag> {
        compute_weight_matrix(self.z())
    }

    pub fn gram(&self) -> GramMatrix {
        gram(self.w()).expect("dataset values are finite")
    }
}

fn check_finite(values: ndarray::ArrayViewD<'_, f64>, what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(HdivError::NonFinite(what.to_string()))
    }
}

/// Role assignment for the columns of a CSV file. Columns not named here are
/// ignored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub outcome: String,
    pub treatment: String,
    pub covariates: Vec<String>,
    pub instruments: Vec<String>,
    /// Covariates or instruments that are never penalized.
    pub unpenalized: Vec<String>,
}

impl ColumnSpec {
    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let all = [&self.outcome, &self.treatment]
            .into_iter()
            .chain(self.covariates.iter())
            .chain(self.instruments.iter());
        for name in all {
            if name.is_empty() {
                return Err(HdivError::Config("empty column name in role assignment".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(HdivError::Config(format!(
                    "column `{name}` is assigned more than one role"
                )));
            }
        }
        for name in &self.unpenalized {
            if !self.covariates.contains(name) && !self.instruments.contains(name) {
                return Err(HdivError::Config(format!(
                    "unpenalized column `{name}` is neither a covariate nor an instrument"
                )));
            }
        }
        Ok(())
    }
}

/// Reads a headered, comma-separated numeric table and partitions its columns
/// according to `spec`.
pub fn load_dataset<R: Read>(source: R, spec: &ColumnSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let locate = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HdivError::Config(format!("column `{name}` not found in header")))
    };
    let outcome = locate(&spec.outcome)?;
    let treatment = locate(&spec.treatment)?;
    let covariates = spec
        .covariates
        .iter()
        .map(|c| locate(c))
        .collect::<Result<Vec<_>>>()?;
    let instruments = spec
        .instruments
        .iter()
        .map(|c| locate(c))
        .collect::<Result<Vec<_>>>()?;
    if instruments.len() < 2 {
        return Err(HdivError::Config(format!(
            "overidentification needs at least two instruments, got {}",
            instruments.len()
        )));
    }

    let mut y = Vec::new();
    let mut d = Vec::new();
    let mut x = Vec::new();
    let mut z = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // Line numbers count the header as line 1.
        let line = i + 2;
        let record = record?;
        let cell = |k: usize| -> Result<f64> {
            let raw = record.get(k).ok_or_else(|| HdivError::Parse {
                row: line,
                column: header[k].clone(),
                message: "missing cell".into(),
            })?;
            let value: f64 = raw.parse().map_err(|_| HdivError::Parse {
                row: line,
                column: header[k].clone(),
                message: format!("`{raw}` is not a number"),
            })?;
            if !value.is_finite() {
                return Err(HdivError::Parse {
                    row: line,
                    column: header[k].clone(),
                    message: format!("`{raw}` is not finite"),
                });
            }
            Ok(value)
        };
        y.push(cell(outcome)?);
        d.push(cell(treatment)?);
        for &k in &covariates {
            x.push(cell(k)?);
        }
        for &k in &instruments {
            z.push(cell(k)?);
        }
    }
    let n = y.len();
    let x =
        Array2::from_shape_vec((n, covariates.len()), x).map_err(|e| HdivError::Dimension(e.to_string()))?;
    let z =
        Array2::from_shape_vec((n, instruments.len()), z).map_err(|e| HdivError::Dimension(e.to_string()))?;
    let names = ColumnNames {
        outcome: spec.outcome.clone(),
        treatment: spec.treatment.clone(),
        covariates: spec.covariates.clone(),
        instruments: spec.instruments.clone(),
    };
    let exempt = names
        .design()
        .map(|c| spec.unpenalized.iter().any(|u| u == c))
        .collect();
    Dataset::with_names(Array1::from(y), Array1::from(d), x, z, names)?.with_penalty_exempt(exempt)
}

/// Sample mean and standard deviation (divisor `n - 1`).
fn mean_sd(col: ArrayView1<'_, f64>) -> (f64, f64) {
    let n = col.len() as f64;
    let mean = col.sum() / n;
    let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn standardize_column(mut col: ndarray::ArrayViewMut1<'_, f64>, name: &str) -> Result<(f64, f64)> {
    let (mean, sd) = mean_sd(col.view());
    let scale = mean.abs().max(1.0);
    if !(sd > 1e-12 * scale) {
        return Err(HdivError::ZeroVariance(name.to_string()));
    }
    col.mapv_inplace(|v| (v - mean) / sd);
    Ok((mean, sd))
}

/// Centers every column of `Y`, `D`, `X` and `Z` and scales it to unit sample
/// standard deviation.
///
/// The scaling of the input is kept on the result. Standardizing an already
/// standardized dataset keeps the original scaling metadata.
pub fn standardize(data: &Dataset) -> Result<Dataset> {
    let mut out = data.clone();
    let outcome = standardize_column(out.y.view_mut(), &data.names.outcome)?;
    let treatment = standardize_column(out.d.view_mut(), &data.names.treatment)?;
    let names: Vec<String> = data.names.design().map(str::to_string).collect();
    let mut design = Vec::with_capacity(data.p());
    for (col, name) in out.w.axis_iter_mut(Axis(1)).zip(&names) {
        design.push(standardize_column(col, name)?);
    }
    if out.scaling.is_none() {
        out.scaling = Some(Scaling {
            outcome,
            treatment,
            design,
        });
    }
    Ok(out)
}

/// The diagonal instrument weighting `A = diag(Z'Z / n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightDiag {
    diag: Array1<f64>,
    sqrt_diag: Array1<f64>,
}

impl WeightDiag {
    pub fn from_diag(diag: Array1<f64>) -> Result<Self> {
        if let Some(j) = diag.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(HdivError::DegenerateInstrument(format!("Z{}", j + 1)));
        }
        let sqrt_diag = diag.mapv(f64::sqrt);
        Ok(Self { diag, sqrt_diag })
    }

    pub fn identity(p_z: usize) -> Self {
        Self::from_diag(Array1::ones(p_z)).expect("ones are positive")
    }

    pub fn diag(&self) -> ArrayView1<'_, f64> {
        self.diag.view()
    }

    pub fn sqrt_diag(&self) -> ArrayView1<'_, f64> {
        self.sqrt_diag.view()
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `A v`.
    pub fn apply(&self, v: ArrayView1<'_, f64>) -> Array1<f64> {
        &self.diag * &v
    }

    /// `x' A y`.
    pub fn inner(&self, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
        x.iter()
            .zip(y.iter())
            .zip(self.diag.iter())
            .map(|((a, b), w)| a * w * b)
            .sum()
    }

    /// `x' A x`.
    pub fn quadratic(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.inner(x, x)
    }
}

pub fn compute_weight_matrix(z: ArrayView2<'_, f64>) -> Result<WeightDiag> {
    if z.nrows() == 0 || z.ncols() == 0 {
        return Err(HdivError::Dimension("empty instrument matrix".into()));
    }
    let n = z.nrows() as f64;
    let diag: Array1<f64> = z
        .axis_iter(Axis(1))
        .map(|col| col.iter().map(|v| v * v).sum::<f64>() / n)
        .collect();
    WeightDiag::from_diag(diag)
}

/// Sample second-moment matrix `W'W / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    sigma_hat: Array2<f64>,
}

impl GramMatrix {
    /// Wraps a square matrix, symmetrizing it.
    pub fn from_matrix(m: Array2<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(HdivError::Dimension(format!(
                "Gram matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        check_finite(m.view().into_dyn(), "Gram matrix")?;
        let sym = (&m + &m.t()) * 0.5;
        Ok(Self { sigma_hat: sym })
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.sigma_hat.view()
    }

    pub fn dim(&self) -> usize {
        self.sigma_hat.nrows()
    }
}

pub fn gram(w: ArrayView2<'_, f64>) -> Result<GramMatrix> {
    if w.nrows() == 0 {
        return Err(HdivError::Dimension("Gram matrix of an empty design".into()));
    }
    check_finite(w.into_dyn(), "design")?;
    let n = w.nrows() as f64;
    GramMatrix::from_matrix(w.t().dot(&w) / n)
}
