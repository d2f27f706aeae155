//! Labeled/unlabeled observations, pooled standardization, and fold splits.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::{stream, stream_rng};

/// Labeled design, response, and optional unlabeled covariate rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x_labeled: Matrix,
    y: Vec<f64>,
    x_unlabeled: Matrix,
    feature_names: Vec<String>,
    response_name: String,
}

impl Dataset {
    pub fn new(
        x_labeled: Matrix,
        y: Vec<f64>,
        x_unlabeled: Option<Matrix>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let (n, p) = (x_labeled.nrows(), x_labeled.ncols());
        if n < 2 || p < 2 {
            return Err(Error::InvalidInput(format!(
                "need n >= 2 and p >= 2, got n = {n}, p = {p}"
            )));
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: y.len(),
            });
        }
        let x_unlabeled = x_unlabeled.unwrap_or_else(|| Matrix::zeros(0, p));
        if x_unlabeled.nrows() > 0 && x_unlabeled.ncols() != p {
            return Err(Error::ColumnMismatch(format!(
                "unlabeled rows have {} columns, labeled have {p}",
                x_unlabeled.ncols()
            )));
        }
        let x_unlabeled = if x_unlabeled.nrows() == 0 {
            Matrix::zeros(0, p)
        } else {
            x_unlabeled
        };
        if !x_labeled.is_finite() || !x_unlabeled.is_finite() || y.iter().any(|v| !v.is_finite())
        {
            return Err(Error::InvalidInput("non-finite entry in dataset".into()));
        }
        let feature_names =
            feature_names.unwrap_or_else(|| (0..p).map(|j| format!("x{}", j + 1)).collect());
        if feature_names.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: feature_names.len(),
            });
        }
        Ok(Self {
            x_labeled,
            y,
            x_unlabeled,
            feature_names,
            response_name: "y".into(),
        })
    }

    pub fn with_response_name(mut self, name: impl Into<String>) -> Self {
        self.response_name = name.into();
        self
    }

    pub fn n(&self) -> usize {
        self.x_labeled.nrows()
    }

    pub fn n_unlabeled(&self) -> usize {
        self.x_unlabeled.nrows()
    }

    pub fn p(&self) -> usize {
        self.x_labeled.ncols()
    }

    pub fn x_labeled(&self) -> &Matrix {
        &self.x_labeled
    }

    pub fn x_unlabeled(&self) -> &Matrix {
        &self.x_unlabeled
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    /// Same observations with a new response vector.
    pub fn with_y(&self, y: Vec<f64>) -> Result<Self> {
        Dataset::new(
            self.x_labeled.clone(),
            y,
            Some(self.x_unlabeled.clone()),
            Some(self.feature_names.clone()),
        )
        .map(|d| d.with_response_name(self.response_name.clone()))
    }

    /// Keep only the given columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.p()) {
            return Err(Error::OutOfRange(format!("column index {bad}")));
        }
        let names = cols.iter().map(|&c| self.feature_names[c].clone()).collect();
        Dataset::new(
            self.x_labeled.select_columns(cols),
            self.y.clone(),
            Some(self.x_unlabeled.select_columns(cols)),
            Some(names),
        )
        .map(|d| d.with_response_name(self.response_name.clone()))
    }
}

/// Which rows supply the centering used by the labeled (refit) design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CenterMode {
    /// Pooled labeled + unlabeled means for every stage.
    #[default]
    Pooled,
    /// Pooled transform for neighborhood estimation; labeled rows re-centered
    /// on their own means for the working regressions.
    Labeled,
}

/// A dataset after pooled centering and unit-variance scaling of covariates.
#[derive(Debug, Clone)]
pub struct StandardizedDataset {
    x_labeled: Matrix,
    x_unlabeled: Matrix,
    x_refit: Option<Matrix>,
    y: Vec<f64>,
    pooled_means: Vec<f64>,
    pooled_scales: Vec<f64>,
    labeled_y_mean: f64,
    feature_names: Vec<String>,
    center: CenterMode,
}

impl StandardizedDataset {
    pub fn n(&self) -> usize {
        self.x_labeled.nrows()
    }

    pub fn n_unlabeled(&self) -> usize {
        self.x_unlabeled.nrows()
    }

    pub fn n_total(&self) -> usize {
        self.n() + self.n_unlabeled()
    }

    pub fn p(&self) -> usize {
        self.x_labeled.ncols()
    }

    /// Labeled rows under the pooled transform.
    pub fn x_labeled(&self) -> &Matrix {
        &self.x_labeled
    }

    pub fn x_unlabeled(&self) -> &Matrix {
        &self.x_unlabeled
    }

    /// Labeled design used by the working regressions.
    pub fn refit_design(&self) -> &Matrix {
        self.x_refit.as_ref().unwrap_or(&self.x_labeled)
    }

    /// Row `i` of the pooled `[x_labeled; x_unlabeled]` matrix.
    pub fn pooled_row(&self, i: usize) -> &[f64] {
        if i < self.n() {
            self.x_labeled.row(i)
        } else {
            self.x_unlabeled.row(i - self.n())
        }
    }

    pub fn pooled_matrix(&self) -> Matrix {
        self.x_labeled
            .vstack(&self.x_unlabeled)
            .expect("column counts agree")
    }

    /// Unnormalized pooled Gram `X̃ᵀX̃` over all n + N rows.
    pub fn pooled_gram(&self) -> Matrix {
        let mut g = self.x_labeled.gram_rows(0..self.n());
        if self.n_unlabeled() > 0 {
            let gu = self.x_unlabeled.gram_rows(0..self.n_unlabeled());
            g.add_assign(&gu);
        }
        g
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn pooled_means(&self) -> &[f64] {
        &self.pooled_means
    }

    pub fn pooled_scales(&self) -> &[f64] {
        &self.pooled_scales
    }

    pub fn labeled_y_mean(&self) -> f64 {
        self.labeled_y_mean
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn center_mode(&self) -> CenterMode {
        self.center
    }

    /// Same covariates with a replaced response (the covariate transform does
    /// not depend on `y`).
    pub fn with_y(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: y.len(),
            });
        }
        let mut out = self.clone();
        out.labeled_y_mean = mean(&y);
        out.y = y;
        Ok(out)
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Center and scale covariates with pooled statistics (divisor `n + N − 1`).
pub fn standardize(d: &Dataset) -> Result<StandardizedDataset> {
    standardize_with(d, CenterMode::Pooled)
}

pub fn standardize_with(d: &Dataset, center: CenterMode) -> Result<StandardizedDataset> {
    let (n, nu, p) = (d.n(), d.n_unlabeled(), d.p());
    let total = (n + nu) as f64;
    let mut means = vec![0.0; p];
    for m in [d.x_labeled(), d.x_unlabeled()] {
        for i in 0..m.nrows() {
            for (acc, v) in means.iter_mut().zip(m.row(i)) {
                *acc += v;
            }
        }
    }
    means.iter_mut().for_each(|v| *v /= total);
    let mut ss = vec![0.0; p];
    for m in [d.x_labeled(), d.x_unlabeled()] {
        for i in 0..m.nrows() {
            for ((acc, v), mu) in ss.iter_mut().zip(m.row(i)).zip(&means) {
                *acc += (v - mu) * (v - mu);
            }
        }
    }
    let mut scales = Vec::with_capacity(p);
    for (j, s) in ss.iter().enumerate() {
        let var = s / (total - 1.0);
        if !(var > 1e-12) {
            return Err(Error::ConstantColumn(j));
        }
        scales.push(var.sqrt());
    }
    let transform = |m: &Matrix| {
        let mut out = m.clone();
        for i in 0..out.nrows() {
            for ((v, mu), sd) in out.row_mut(i).iter_mut().zip(&means).zip(&scales) {
                *v = (*v - mu) / sd;
            }
        }
        out
    };
    let x_labeled = transform(d.x_labeled());
    let x_unlabeled = transform(d.x_unlabeled());
    let x_refit = match center {
        CenterMode::Pooled => None,
        CenterMode::Labeled => {
            let mut m = x_labeled.clone();
            for j in 0..p {
                let mu = (0..n).map(|i| m[(i, j)]).sum::<f64>() / n as f64;
                for i in 0..n {
                    m[(i, j)] -= mu;
                }
            }
            Some(m)
        }
    };
    Ok(StandardizedDataset {
        x_labeled,
        x_unlabeled,
        x_refit,
        y: d.y().to_vec(),
        pooled_means: means,
        pooled_scales: scales,
        labeled_y_mean: mean(d.y()),
        feature_names: d.feature_names().to_vec(),
        center,
    })
}

/// Fold labels in `[0, k)` for `n` observations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    k: usize,
    assignment: Vec<usize>,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Balanced, seeded fold assignment (Fisher–Yates shuffle of a round-robin layout).
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 || k > n {
        return Err(Error::BadFoldCount { n, k });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, stream::FOLDS);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    let mut assignment = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        assignment[i] = pos % k;
    }
    Ok(FoldAssignment { k, assignment })
}

/// Format a float with 17 significant digits (round-trip exact).
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn parse_cell(s: &str) -> Option<f64> {
    let v: f64 = s.trim().parse().ok()?;
    v.is_finite().then_some(v)
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

/// Read a labeled CSV (and optionally an unlabeled CSV with the same covariate
/// columns in any order). With `response_column = None` the last column of the
/// labeled file is the response.
pub fn load_csv(
    path: &Path,
    response_column: Option<&str>,
    unlabeled_path: Option<&Path>,
) -> Result<Dataset> {
    let (header, rows) = read_table(path)?;
    let response_idx = match response_column {
        Some(name) => header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?,
        None => header
            .len()
            .checked_sub(1)
            .ok_or_else(|| Error::InvalidInput("empty header".into()))?,
    };
    let feature_cols: Vec<usize> = (0..header.len()).filter(|&c| c != response_idx).collect();
    let names: Vec<String> = feature_cols.iter().map(|&c| header[c].clone()).collect();
    let p = names.len();
    let mut x = Vec::with_capacity(rows.len() * p);
    let mut y = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        for &c in &feature_cols {
            let v = parse_cell(&row[c]).ok_or_else(|| Error::NonNumericCell {
                row: r + 1,
                column: header[c].clone(),
            })?;
            x.push(v);
        }
        y.push(
            parse_cell(&row[response_idx]).ok_or_else(|| Error::NonNumericCell {
                row: r + 1,
                column: header[response_idx].clone(),
            })?,
        );
    }
    let x_labeled = Matrix::from_vec(rows.len(), p, x)?;

    let x_unlabeled = match unlabeled_path {
        None => None,
        Some(up) => {
            let (uheader, urows) = read_table(up)?;
            if uheader.len() != p {
                return Err(Error::ColumnMismatch(format!(
                    "unlabeled file has {} columns, expected {p}",
                    uheader.len()
                )));
            }
            let mut order = Vec::with_capacity(p);
            for name in &names {
                let c = uheader.iter().position(|h| h == name).ok_or_else(|| {
                    Error::ColumnMismatch(format!("unlabeled file lacks column `{name}`"))
                })?;
                order.push(c);
            }
            let mut data = Vec::with_capacity(urows.len() * p);
            for (r, row) in urows.iter().enumerate() {
                for &c in &order {
                    data.push(parse_cell(&row[c]).ok_or_else(|| Error::NonNumericCell {
                        row: r + 1,
                        column: uheader[c].clone(),
                    })?);
                }
            }
            Some(Matrix::from_vec(urows.len(), p, data)?)
        }
    };
    Ok(Dataset::new(x_labeled, y, x_unlabeled, Some(names))?
        .with_response_name(header[response_idx].clone()))
}

/// Write the labeled rows (covariates, then response) and, if requested, the
/// unlabeled rows to CSV at 17 significant digits.
pub fn write_csv(d: &Dataset, path: &Path, unlabeled_path: Option<&Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = d.feature_names().iter().map(String::as_str).collect();
    header.push(d.response_name());
    w.write_record(&header)?;
    for i in 0..d.n() {
        let mut rec: Vec<String> = d.x_labeled().row(i).iter().map(|&v| fmt_f64(v)).collect();
        rec.push(fmt_f64(d.y()[i]));
        w.write_record(&rec)?;
    }
    w.flush()?;
    if let Some(up) = unlabeled_path {
        let mut w = csv::Writer::from_path(up)?;
        w.write_record(d.feature_names())?;
        for i in 0..d.n_unlabeled() {
            w.write_record(d.x_unlabeled().row(i).iter().map(|&v| fmt_f64(v)))?;
        }
        w.flush()?;
    }
    Ok(())
}
