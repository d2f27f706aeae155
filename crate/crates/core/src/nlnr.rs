//! Localized least squares on the estimated working set.
//!
//! For target `j` the response is regressed on the columns of `Ξ̃ⱼ` only, and
//! the first slope is reported with a heteroskedasticity-robust sandwich
//! variance. The boosted variants widen the working set with the columns most
//! marginally associated with `y`, optionally choosing them on one half of
//! the sample and refitting on the other.
//!
//! Standardized slopes are mapped back to the original covariate units before
//! reporting; `z` and `p_value` are unaffected by the mapping.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{fmt_f64, StandardizedDataset};
use crate::error::{Error, Result};
use crate::numerics::{cholesky, invert_spd, normal_quantile, solve_spd, two_sided_p, Matrix, SymMatrix};
use crate::rng::{stream, stream_rng};
use crate::scn::ScnEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Nlnr,
    BoostedSplit,
    BoostedFull,
    #[serde(rename = "dlasso")]
    DLasso,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Nlnr => "nlnr",
            Method::BoostedSplit => "boosted-split",
            Method::BoostedFull => "boosted-full",
            Method::DLasso => "dlasso",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nlnr" => Ok(Method::Nlnr),
            "boosted-split" => Ok(Method::BoostedSplit),
            "boosted-full" | "boosted" => Ok(Method::BoostedFull),
            "dlasso" => Ok(Method::DLasso),
            other => Err(Error::InvalidInput(format!("unknown method `{other}`"))),
        }
    }
}

/// OLS of the centered response on the working columns over a row subset.
#[derive(Debug, Clone)]
pub struct WorkingFit {
    pub set: Vec<usize>,
    pub rows: Vec<usize>,
    pub slopes: Vec<f64>,
    pub intercept: f64,
    pub residuals: Vec<f64>,
    /// `Σ̂_G⁻¹` with `Σ̂_G = X_GᵀX_G / m`.
    pub gram_inv: SymMatrix,
    /// `X_G` restricted to `rows`.
    pub design: Matrix,
}

impl WorkingFit {
    pub fn m(&self) -> usize {
        self.rows.len()
    }
}

pub fn fit_working_ols(sd: &StandardizedDataset, g: &[usize], rows: &[usize]) -> Result<WorkingFit> {
    let p = sd.p();
    if g.is_empty() {
        return Err(Error::InvalidInput("empty working set".into()));
    }
    let mut seen = vec![false; p];
    for &k in g {
        if k >= p {
            return Err(Error::OutOfRange(format!("column {k} with p = {p}")));
        }
        if seen[k] {
            return Err(Error::SingularWorkingGram(g.to_vec()));
        }
        seen[k] = true;
    }
    if let Some(&bad) = rows.iter().find(|&&i| i >= sd.n()) {
        return Err(Error::OutOfRange(format!("row {bad} with n = {}", sd.n())));
    }
    if g.len() >= rows.len() {
        return Err(Error::WorkingSetTooLarge {
            size: g.len(),
            rows: rows.len(),
        });
    }
    let design = sd.refit_design().select(rows, g);
    let yv: Vec<f64> = rows.iter().map(|&i| sd.y()[i]).collect();
    let intercept = crate::dataset::mean(&yv);
    let yc: Vec<f64> = yv.iter().map(|v| v - intercept).collect();
    let gram = design.gram_rows(0..rows.len());
    let sym = SymMatrix::new(gram).map_err(|_| Error::SingularWorkingGram(g.to_vec()))?;
    let factor = cholesky(&sym, 0.0).map_err(|e| match e {
        Error::NotPositiveDefinite(_) => Error::SingularWorkingGram(g.to_vec()),
        other => other,
    })?;
    let xty = design.transpose().matvec(&yc)?;
    let slopes = solve_spd(&factor, &xty)?;
    let fitted = design.matvec(&slopes)?;
    let residuals: Vec<f64> = yc.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let mut inv = invert_spd(&factor).into_matrix();
    inv.scale(rows.len() as f64);
    let gram_inv = SymMatrix::symmetrize(inv)?;
    Ok(WorkingFit {
        set: g.to_vec(),
        rows: rows.to_vec(),
        slopes,
        intercept,
        residuals,
        gram_inv,
        design,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SandwichVariance {
    /// Variance of the first slope, `1/m` factor included.
    pub variance: f64,
    /// Residuals vanished, so the variance is zero.
    pub degenerate: bool,
}

/// `σ̃² = m⁻¹ e₁ᵀ Σ̂⁻¹ E_m[x xᵀ ε̂²] Σ̂⁻¹ e₁`.
pub fn sandwich_variance(fit: &WorkingFit) -> SandwichVariance {
    let m = fit.m() as f64;
    let q = fit.set.len();
    let a: Vec<f64> = (0..q).map(|k| fit.gram_inv.get(k, 0)).collect();
    let mut acc = 0.0;
    for (i, &e) in fit.residuals.iter().enumerate() {
        let s = crate::numerics::dot(fit.design.row(i), &a);
        acc += s * s * e * e;
    }
    let variance = acc / (m * m);
    SandwichVariance {
        variance,
        degenerate: variance == 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateInference {
    pub j: usize,
    pub estimate: f64,
    pub variance: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub z: f64,
    pub p_value: f64,
    pub working_set: Vec<usize>,
    pub method: Method,
    pub n_effective: usize,
    pub truncated: bool,
    pub degenerate: bool,
}

impl CoordinateInference {
    /// Assemble from an estimate and its variance (both already in reporting units).
    pub fn from_parts(
        j: usize,
        estimate: f64,
        variance: f64,
        alpha: f64,
        method: Method,
        working_set: Vec<usize>,
        n_effective: usize,
    ) -> Result<Self> {
        let zq = normal_quantile(1.0 - alpha / 2.0)?;
        let se = variance.sqrt();
        let degenerate = se == 0.0;
        let z = if degenerate {
            if estimate == 0.0 {
                0.0
            } else {
                estimate.signum() * f64::INFINITY
            }
        } else {
            estimate / se
        };
        Ok(Self {
            j,
            estimate,
            variance,
            std_error: se,
            ci_low: estimate - zq * se,
            ci_high: estimate + zq * se,
            z,
            p_value: two_sided_p(z),
            working_set,
            method,
            n_effective,
            truncated: false,
            degenerate,
        })
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!("alpha = {alpha}")))
    }
}

/// Refit on `set` over `rows` and report the first slope in original units.
pub fn infer_on_rows(
    sd: &StandardizedDataset,
    set: &[usize],
    rows: &[usize],
    alpha: f64,
    method: Method,
) -> Result<CoordinateInference> {
    check_alpha(alpha)?;
    let fit = fit_working_ols(sd, set, rows)?;
    let sw = sandwich_variance(&fit);
    let j = set[0];
    let scale = sd.pooled_scales()[j];
    let mut out = CoordinateInference::from_parts(
        j,
        fit.slopes[0] / scale,
        sw.variance / (scale * scale),
        alpha,
        method,
        set.to_vec(),
        rows.len(),
    )?;
    out.degenerate = sw.degenerate;
    Ok(out)
}

fn check_scn(j: usize, sd: &StandardizedDataset, scn: &ScnEstimate) -> Result<()> {
    if scn.j != j || scn.xi.first() != Some(&j) {
        return Err(Error::InvalidInput(format!(
            "neighborhood for coordinate {} passed for target {j}",
            scn.j
        )));
    }
    if j >= sd.p() {
        return Err(Error::OutOfRange(format!("coordinate {j} with p = {}", sd.p())));
    }
    Ok(())
}

pub fn nlnr_infer(
    j: usize,
    sd: &StandardizedDataset,
    scn: &ScnEstimate,
    alpha: f64,
) -> Result<CoordinateInference> {
    check_scn(j, sd, scn)?;
    let rows: Vec<usize> = (0..sd.n()).collect();
    let mut out = infer_on_rows(sd, &scn.xi, &rows, alpha, Method::Nlnr)?;
    out.truncated = scn.truncated;
    Ok(out)
}

/// `|cov(X_l, y)|` over `rows`, divisor `|rows| − 1`, in standardized units.
pub fn marginal_scores(sd: &StandardizedDataset, rows: &[usize]) -> Result<Vec<f64>> {
    if rows.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "marginal scores need at least 2 rows, got {}",
            rows.len()
        )));
    }
    let x = sd.refit_design();
    let p = sd.p();
    let m = rows.len() as f64;
    let ybar = rows.iter().map(|&i| sd.y()[i]).sum::<f64>() / m;
    let mut xbar = vec![0.0; p];
    for &i in rows {
        for (acc, v) in xbar.iter_mut().zip(x.row(i)) {
            *acc += v;
        }
    }
    xbar.iter_mut().for_each(|v| *v /= m);
    let mut cov = vec![0.0; p];
    for &i in rows {
        let dy = sd.y()[i] - ybar;
        for ((acc, v), mu) in cov.iter_mut().zip(x.row(i)).zip(&xbar) {
            *acc += (v - mu) * dy;
        }
    }
    Ok(cov.into_iter().map(|c| (c / (m - 1.0)).abs()).collect())
}

/// `xi` followed by the `d_j` highest-scoring coordinates outside it
/// (ties to the lower index), in score order.
pub fn boost_set(xi: &[usize], scores: &[f64], d_j: usize) -> Result<Vec<usize>> {
    let p = scores.len();
    let mut inside = vec![false; p];
    for &k in xi {
        if k >= p {
            return Err(Error::OutOfRange(format!("column {k} with p = {p}")));
        }
        inside[k] = true;
    }
    let mut outside: Vec<usize> = (0..p).filter(|&l| !inside[l]).collect();
    if d_j > outside.len() {
        return Err(Error::BadAugmentationSize {
            d: d_j,
            available: outside.len(),
        });
    }
    outside.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut h = xi.to_vec();
    h.extend_from_slice(&outside[..d_j]);
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    /// `None` uses `min(⌊n^{1/3}⌋, p − |Ξ̃ⱼ|)`.
    #[serde(default)]
    pub d_j: Option<usize>,
    #[serde(default)]
    pub split: bool,
    #[serde(default)]
    pub split_seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            d_j: None,
            split: false,
            split_seed: 0,
        }
    }
}

fn icbrt(n: usize) -> usize {
    let mut k = (n as f64).cbrt().round() as usize;
    while k * k * k > n {
        k -= 1;
    }
    while (k + 1) * (k + 1) * (k + 1) <= n {
        k += 1;
    }
    k
}

impl BoostConfig {
    pub fn augmentation(&self, n: usize, p: usize, xi_len: usize) -> usize {
        self.d_j
            .unwrap_or_else(|| icbrt(n).min(p.saturating_sub(xi_len)))
    }
}

/// `(I₁, I₂)` with `|I₂| = ⌊n/2⌋`, both sorted.
pub fn split_halves(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream_rng(seed, stream::SPLIT));
    let (i2, i1) = perm.split_at(n / 2);
    let mut i1 = i1.to_vec();
    let mut i2 = i2.to_vec();
    i1.sort_unstable();
    i2.sort_unstable();
    (i1, i2)
}

/// Scores and refit rows shared by every coordinate of a boosted run.
struct BoostPlan {
    scores: Vec<f64>,
    refit_rows: Vec<usize>,
    method: Method,
}

impl BoostPlan {
    fn new(sd: &StandardizedDataset, cfg: &BoostConfig) -> Result<Self> {
        if cfg.split {
            let (i1, i2) = split_halves(sd.n(), cfg.split_seed);
            Ok(Self {
                scores: marginal_scores(sd, &i1)?,
                refit_rows: i2,
                method: Method::BoostedSplit,
            })
        } else {
            let rows: Vec<usize> = (0..sd.n()).collect();
            Ok(Self {
                scores: marginal_scores(sd, &rows)?,
                refit_rows: rows,
                method: Method::BoostedFull,
            })
        }
    }

    fn infer(
        &self,
        j: usize,
        sd: &StandardizedDataset,
        scn: &ScnEstimate,
        cfg: &BoostConfig,
        alpha: f64,
    ) -> Result<CoordinateInference> {
        check_scn(j, sd, scn)?;
        let d = cfg.augmentation(sd.n(), sd.p(), scn.xi.len());
        let h = boost_set(&scn.xi, &self.scores, d)?;
        let mut out = infer_on_rows(sd, &h, &self.refit_rows, alpha, self.method)?;
        out.truncated = scn.truncated;
        Ok(out)
    }
}

pub fn boosted_nlnr_infer(
    j: usize,
    sd: &StandardizedDataset,
    scn: &ScnEstimate,
    cfg: &BoostConfig,
    alpha: f64,
) -> Result<CoordinateInference> {
    check_scn(j, sd, scn)?;
    BoostPlan::new(sd, cfg)?.infer(j, sd, scn, cfg, alpha)
}

/// Coordinatewise inference in index order; a failing coordinate keeps its
/// error in its own slot.
pub fn infer_all(
    sd: &StandardizedDataset,
    scn_list: &[ScnEstimate],
    method: Method,
    cfg: &BoostConfig,
    alpha: f64,
) -> Result<Vec<Result<CoordinateInference>>> {
    check_alpha(alpha)?;
    if scn_list.len() != sd.p() {
        return Err(Error::DimensionMismatch {
            expected: sd.p(),
            got: scn_list.len(),
        });
    }
    let plan = match method {
        Method::Nlnr => None,
        Method::BoostedFull | Method::BoostedSplit => {
            let cfg = BoostConfig {
                split: method == Method::BoostedSplit,
                ..*cfg
            };
            Some((BoostPlan::new(sd, &cfg)?, cfg))
        }
        Method::DLasso => {
            return Err(Error::InvalidInput(
                "dlasso inference lives in the baselines module".into(),
            ))
        }
    };
    Ok((0..sd.p())
        .into_par_iter()
        .map(|j| match &plan {
            None => nlnr_infer(j, sd, &scn_list[j], alpha),
            Some((plan, cfg)) => plan.infer(j, sd, &scn_list[j], cfg, alpha),
        })
        .collect())
}

/// Inference report; failed coordinates keep their row with blank numbers.
pub fn write_inference<W: Write>(
    out: W,
    names: &[String],
    results: &[(usize, Method, std::result::Result<&CoordinateInference, String>)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "j",
        "name",
        "method",
        "estimate",
        "std_error",
        "ci_low",
        "ci_high",
        "z",
        "p_value",
        "working_set_size",
        "truncated_flag",
    ])?;
    for (j, method, r) in results {
        let name = names.get(*j).cloned().unwrap_or_default();
        match r {
            Ok(c) => w.write_record([
                j.to_string(),
                name,
                method.to_string(),
                fmt_f64(c.estimate),
                fmt_f64(c.std_error),
                fmt_f64(c.ci_low),
                fmt_f64(c.ci_high),
                fmt_f64(c.z),
                fmt_f64(c.p_value),
                c.working_set.len().to_string(),
                c.truncated.to_string(),
            ])?,
            Err(_) => w.write_record([
                j.to_string(),
                name,
                method.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ])?,
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_inference_file(path: &Path, names: &[String], results: &[Result<CoordinateInference>], method: Method) -> Result<()> {
    let rows: Vec<_> = results
        .iter()
        .enumerate()
        .map(|(k, r)| match r {
            Ok(c) => (c.j, method, Ok(c)),
            Err(e) => (k, method, Err(e.to_string())),
        })
        .collect();
    write_inference(std::fs::File::create(path)?, names, &rows)
}
