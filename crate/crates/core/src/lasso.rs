//! ℓ1-penalized least squares by cyclic coordinate descent.
//!
//! The objective is `(2m)⁻¹‖target − design·β‖² + λ‖β‖₁` with no intercept;
//! columns are expected to arrive centered. The solver works on sufficient
//! statistics (`XᵀX/m`, `Xᵀy/m`), which lets nodewise regressions share one
//! pooled Gram matrix and lets cross-validation score held-out folds from
//! their own Gram blocks.

use serde::{Deserialize, Serialize};

use crate::dataset::FoldAssignment;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Max-abs coefficient change per sweep that counts as stationary.
    pub coef_tol: f64,
    pub kkt_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            coef_tol: 1e-8,
            kkt_tol: 1e-6,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || !(self.coef_tol > 0.0) || !(self.kkt_tol > 0.0) {
            return Err(Error::OutOfRange(format!("solver options {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LassoProblem<'a> {
    pub design: &'a Matrix,
    pub target: &'a [f64],
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub coefficients: Vec<f64>,
    /// Number of coordinate sweeps (full or active-set).
    pub iterations: usize,
    pub converged: bool,
    pub lambda: f64,
    /// Largest KKT violation at the returned coefficients.
    pub kkt_residual: f64,
}

impl LassoFit {
    pub fn support(&self) -> Vec<usize> {
        self.coefficients
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

#[inline]
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Unnormalized cross-products over some set of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RawStats {
    pub gram: Matrix,
    pub xty: Vec<f64>,
    pub yty: f64,
    pub rows: usize,
}

impl RawStats {
    pub fn from_rows(design: &Matrix, target: &[f64], rows: &[usize]) -> Self {
        let q = design.ncols();
        let gram = design.gram_rows(rows.iter().copied());
        let mut xty = vec![0.0; q];
        let mut yty = 0.0;
        for &i in rows {
            let y = target[i];
            yty += y * y;
            for (acc, x) in xty.iter_mut().zip(design.row(i)) {
                *acc += x * y;
            }
        }
        Self {
            gram,
            xty,
            yty,
            rows: rows.len(),
        }
    }

    pub fn from_design(design: &Matrix, target: &[f64]) -> Self {
        let rows: Vec<usize> = (0..design.nrows()).collect();
        Self::from_rows(design, target, &rows)
    }

    /// Statistics of the complementary rows, `self − part`.
    pub fn minus(&self, part: &RawStats) -> RawStats {
        RawStats {
            gram: self.gram.sub(&part.gram),
            xty: self.xty.iter().zip(&part.xty).map(|(a, b)| a - b).collect(),
            yty: self.yty - part.yty,
            rows: self.rows - part.rows,
        }
    }

    pub fn normalized(&self) -> SuffStats {
        let m = self.rows as f64;
        let mut gram = self.gram.clone();
        gram.scale(1.0 / m);
        SuffStats {
            gram,
            xty: self.xty.iter().map(|v| v / m).collect(),
            yty: self.yty / m,
        }
    }

    /// Mean squared residual `‖y − Xβ‖²/rows` evaluated from the cross-products.
    pub fn mse(&self, beta: &[f64]) -> f64 {
        let q = beta.len();
        let mut quad = 0.0;
        let mut lin = 0.0;
        for a in 0..q {
            if beta[a] == 0.0 {
                continue;
            }
            lin += beta[a] * self.xty[a];
            let row = self.gram.row(a);
            let mut s = 0.0;
            for b in 0..q {
                s += row[b] * beta[b];
            }
            quad += beta[a] * s;
        }
        ((self.yty - 2.0 * lin + quad) / self.rows as f64).max(0.0)
    }
}

/// Normalized sufficient statistics `XᵀX/m`, `Xᵀy/m`, `yᵀy/m`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    pub gram: Matrix,
    pub xty: Vec<f64>,
    pub yty: f64,
}

impl SuffStats {
    pub fn dim(&self) -> usize {
        self.xty.len()
    }

    /// Smallest λ at which the zero vector is optimal.
    pub fn lambda_max(&self) -> f64 {
        self.xty.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn objective(&self, beta: &[f64], lambda: f64) -> f64 {
        let q = self.dim();
        let mut quad = 0.0;
        for a in 0..q {
            if beta[a] != 0.0 {
                quad += beta[a] * crate::numerics::dot(self.gram.row(a), beta);
            }
        }
        let lin = crate::numerics::dot(beta, &self.xty);
        0.5 * self.yty - lin + 0.5 * quad + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    fn residual_correlations(&self, beta: &[f64]) -> Vec<f64> {
        let q = self.dim();
        let mut c = self.xty.clone();
        for b in 0..q {
            let bb = beta[b];
            if bb == 0.0 {
                continue;
            }
            for (a, ca) in c.iter_mut().enumerate() {
                *ca -= self.gram[(a, b)] * bb;
            }
        }
        c
    }

    /// Largest violation of the lasso stationarity conditions.
    pub fn kkt_residual(&self, beta: &[f64], lambda: f64) -> f64 {
        let c = self.residual_correlations(beta);
        kkt_from_correlations(&c, beta, lambda)
    }
}

fn kkt_from_correlations(c: &[f64], beta: &[f64], lambda: f64) -> f64 {
    c.iter()
        .zip(beta)
        .map(|(&cl, &bl)| {
            // gradient_l = −c_l
            if bl != 0.0 {
                (-cl + lambda * bl.signum()).abs()
            } else {
                (cl.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

struct Descent<'a> {
    stats: &'a SuffStats,
    lambda: f64,
    beta: Vec<f64>,
    corr: Vec<f64>,
}

impl Descent<'_> {
    /// One pass over all coordinates; returns the largest coefficient change.
    fn sweep(&mut self) -> f64 {
        let g = &self.stats.gram;
        let q = self.beta.len();
        let mut max_delta = 0.0_f64;
        for l in 0..q {
            if let Some(delta) = self.step(l) {
                let col = g.row(l);
                for k in 0..q {
                    self.corr[k] -= col[k] * delta;
                }
                max_delta = max_delta.max(delta.abs());
            }
        }
        max_delta
    }

    /// One pass over `active`, keeping `corr` current on `active` only.
    fn sweep_active(&mut self, active: &[usize]) -> f64 {
        let g = &self.stats.gram;
        let mut max_delta = 0.0_f64;
        for &l in active {
            if let Some(delta) = self.step(l) {
                let col = g.row(l);
                for &k in active {
                    self.corr[k] -= col[k] * delta;
                }
                max_delta = max_delta.max(delta.abs());
            }
        }
        max_delta
    }

    fn step(&mut self, l: usize) -> Option<f64> {
        let gll = self.stats.gram[(l, l)];
        if gll <= 0.0 {
            return None;
        }
        let old = self.beta[l];
        let z = self.corr[l] + gll * old;
        let new = soft_threshold(z, self.lambda) / gll;
        let delta = new - old;
        (delta != 0.0).then(|| {
            self.beta[l] = new;
            delta
        })
    }

    /// Objective from the maintained correlations, O(q).
    fn objective(&self) -> f64 {
        let s = &self.stats;
        let mut acc = 0.0;
        let mut l1 = 0.0;
        for ((b, x), c) in self.beta.iter().zip(&s.xty).zip(&self.corr) {
            acc += b * (x + c);
            l1 += b.abs();
        }
        0.5 * s.yty - 0.5 * acc + self.lambda * l1
    }
}

/// Coordinate descent on sufficient statistics. Returns the fit whether or not
/// it converged; `converged = false` only when `max_iter` sweeps ran out.
pub fn fit_stats(
    stats: &SuffStats,
    lambda: f64,
    opts: &SolverOptions,
    warm_start: Option<&[f64]>,
) -> Result<LassoFit> {
    opts.validate()?;
    let q = stats.dim();
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::OutOfRange(format!("lambda = {lambda}")));
    }
    let beta = match warm_start {
        Some(w) if w.len() != q => {
            return Err(Error::DimensionMismatch {
                expected: q,
                got: w.len(),
            })
        }
        Some(w) => w.to_vec(),
        None => vec![0.0; q],
    };
    let corr = stats.residual_correlations(&beta);
    let mut cd = Descent {
        stats,
        lambda,
        beta,
        corr,
    };
    let mut iterations = 0;
    let mut converged = false;
    let mut last_obj = cd.objective();
    let check_monotone = |obj: f64, last: f64| {
        debug_assert!(
            obj <= last + 1e-10 * (1.0 + last.abs()),
            "objective increased: {last} -> {obj}"
        );
    };
    'outer: while iterations < opts.max_iter {
        let delta = cd.sweep();
        iterations += 1;
        if cfg!(debug_assertions) {
            let obj = cd.objective();
            check_monotone(obj, last_obj);
            last_obj = obj;
        }
        if delta <= opts.coef_tol {
            cd.corr = stats.residual_correlations(&cd.beta);
            if kkt_from_correlations(&cd.corr, &cd.beta, lambda) <= opts.kkt_tol {
                converged = true;
                break;
            }
            continue;
        }
        // Active-set sweeps until the active coefficients settle. Inactive
        // correlations go stale here and are rebuilt before the next full sweep.
        let active: Vec<usize> = (0..q).filter(|&l| cd.beta[l] != 0.0).collect();
        loop {
            if iterations >= opts.max_iter {
                break 'outer;
            }
            let delta = cd.sweep_active(&active);
            iterations += 1;
            if cfg!(debug_assertions) {
                // Exact: only active coordinates carry nonzero coefficients.
                let obj = cd.objective();
                check_monotone(obj, last_obj);
                last_obj = obj;
            }
            if delta <= opts.coef_tol {
                break;
            }
        }
        cd.corr = stats.residual_correlations(&cd.beta);
    }
    let kkt_residual = stats.kkt_residual(&cd.beta, lambda);
    Ok(LassoFit {
        coefficients: cd.beta,
        iterations,
        converged,
        lambda,
        kkt_residual,
    })
}

/// Minimize `(2m)⁻¹‖target − design·β‖² + λ‖β‖₁`.
///
/// A fit that exhausts `max_iter` comes back as [`Error::NotConverged`]
/// carrying the partial coefficients.
pub fn fit_lasso(
    problem: &LassoProblem<'_>,
    opts: &SolverOptions,
    warm_start: Option<&[f64]>,
) -> Result<LassoFit> {
    let LassoProblem {
        design,
        target,
        lambda,
    } = *problem;
    if design.ncols() == 0 || design.nrows() < 2 {
        return Err(Error::InvalidInput(format!(
            "lasso needs q >= 1 and m >= 2, got {}x{}",
            design.nrows(),
            design.ncols()
        )));
    }
    if target.len() != design.nrows() {
        return Err(Error::DimensionMismatch {
            expected: design.nrows(),
            got: target.len(),
        });
    }
    if !design.is_finite() || target.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite lasso input".into()));
    }
    let stats = RawStats::from_design(design, target).normalized();
    let fit = fit_stats(&stats, lambda, opts, warm_start)?;
    if fit.converged {
        Ok(fit)
    } else {
        Err(Error::NotConverged(Box::new(fit)))
    }
}

fn converged(fit: LassoFit) -> Result<LassoFit> {
    if fit.converged {
        Ok(fit)
    } else {
        Err(Error::NotConverged(Box::new(fit)))
    }
}

/// `c_λ · n_total^(−1/2 + α̃) · ln(n_total)`.
pub fn theoretical_lambda(n_total: usize, alpha_tilde: f64, c_lambda: f64) -> Result<f64> {
    if n_total < 2 {
        return Err(Error::OutOfRange(format!("n_total = {n_total}")));
    }
    if !(alpha_tilde > 0.0 && alpha_tilde < 0.5) {
        return Err(Error::OutOfRange(format!("alpha_tilde = {alpha_tilde}")));
    }
    if !(c_lambda > 0.0) || !c_lambda.is_finite() {
        return Err(Error::OutOfRange(format!("c_lambda = {c_lambda}")));
    }
    let n = n_total as f64;
    Ok(c_lambda * n.powf(-0.5 + alpha_tilde) * n.ln())
}

/// Log-spaced decreasing grid from `lambda_max` to `lambda_max · min_ratio`.
pub fn lambda_grid(lambda_max: f64, n_lambda: usize, min_ratio: f64) -> Vec<f64> {
    if n_lambda <= 1 || lambda_max <= 0.0 {
        return vec![lambda_max];
    }
    let (hi, lo) = (lambda_max.ln(), (lambda_max * min_ratio).ln());
    (0..n_lambda)
        .map(|i| (hi + (lo - hi) * i as f64 / (n_lambda - 1) as f64).exp())
        .collect()
}

/// Default grid settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_lambda: usize,
    /// Ratio of smallest to largest λ; `None` picks 1e-3 when rows exceed
    /// columns and 1e-2 otherwise.
    pub min_ratio: Option<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_lambda: 50,
            min_ratio: None,
        }
    }
}

impl GridSpec {
    pub fn build(&self, lambda_max: f64, rows: usize, cols: usize) -> Vec<f64> {
        let ratio = self
            .min_ratio
            .unwrap_or(if rows > cols { 1e-3 } else { 1e-2 });
        lambda_grid(lambda_max, self.n_lambda, ratio)
    }
}

/// Cross-validation outcome over a λ grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvOutcome {
    pub lambda: f64,
    pub index: usize,
    pub grid: Vec<f64>,
    pub mean_errors: Vec<f64>,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty lambda grid".into()));
    }
    if grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(Error::OutOfRange("lambda grid entries must be finite and >= 0".into()));
    }
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput("lambda grid must be strictly decreasing".into()));
    }
    Ok(())
}

/// K-fold CV from precomputed cross-products: `full` covers every row and
/// `folds[k]` covers the held-out rows of fold `k`.
pub fn cv_from_stats(
    full: &RawStats,
    folds: &[RawStats],
    grid: &[f64],
    opts: &SolverOptions,
) -> Result<CvOutcome> {
    check_grid(grid)?;
    let mut sums = vec![0.0; grid.len()];
    for held in folds {
        let train = full.minus(held).normalized();
        let mut warm: Option<Vec<f64>> = None;
        for (g, &lambda) in grid.iter().enumerate() {
            let fit = converged(fit_stats(&train, lambda, opts, warm.as_deref())?)?;
            sums[g] += held.mse(&fit.coefficients);
            warm = Some(fit.coefficients);
        }
    }
    let k = folds.len() as f64;
    let mean_errors: Vec<f64> = sums.iter().map(|s| s / k).collect();
    // Scan from the largest λ; strict improvement required, so ties keep the larger λ.
    let mut index = 0;
    for (g, &e) in mean_errors.iter().enumerate() {
        if e < mean_errors[index] {
            index = g;
        }
    }
    Ok(CvOutcome {
        lambda: grid[index],
        index,
        grid: grid.to_vec(),
        mean_errors,
    })
}

/// Choose λ from a strictly decreasing grid by K-fold held-out squared error,
/// warm-starting down the grid; ties go to the larger λ.
pub fn cv_lambda(
    design: &Matrix,
    target: &[f64],
    grid: &[f64],
    folds: &FoldAssignment,
    opts: &SolverOptions,
) -> Result<CvOutcome> {
    if folds.n() != design.nrows() || target.len() != design.nrows() {
        return Err(Error::DimensionMismatch {
            expected: design.nrows(),
            got: folds.n(),
        });
    }
    check_grid(grid)?;
    if grid.len() == 1 {
        return Ok(CvOutcome {
            lambda: grid[0],
            index: 0,
            grid: grid.to_vec(),
            mean_errors: vec![f64::NAN],
        });
    }
    let full = RawStats::from_design(design, target);
    let held: Vec<RawStats> = (0..folds.k())
        .map(|f| RawStats::from_rows(design, target, &folds.test_rows(f)))
        .collect();
    cv_from_stats(&full, &held, grid, opts)
}
