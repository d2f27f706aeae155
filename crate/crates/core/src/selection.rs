//! Variable selection from coordinatewise estimates.
//!
//! Three thresholding rules are supported: raw `|β̃ⱼ| ≥ τⱼ`, studentized
//! `|β̃ⱼ|/σ̃ⱼ ≥ τₙ`, and p-value `q̃ⱼ ≤ α_τ` with optional Holm–Šidák
//! step-down adjustment. An optional cap keeps only the strongest `s̄`
//! coordinates. The studentized cutoff can be tuned by K-fold CV, scoring an
//! OLS refit on the selected set against held-out responses.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{fmt_f64, kfold_split, Dataset, StandardizedDataset};
use crate::error::{Error, Result};
use crate::nlnr::{
    infer_on_rows, marginal_scores, boost_set, split_halves, BoostConfig, CoordinateInference, Method,
};
use crate::numerics::{cholesky, normal_quantile, solve_spd, Matrix, SymMatrix};
use crate::scn::{estimate_all_scn, ScnConfig, ScnEstimate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Thresholds {
    Uniform(f64),
    PerCoordinate(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Adjust {
    #[default]
    None,
    HolmSidak,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum SelectionRule {
    Raw { tau: Thresholds },
    Studentized { tau_n: f64 },
    PValue {
        alpha_tau: f64,
        #[serde(default)]
        adjust: Adjust,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CvPredictor {
    /// OLS of `y` on the selected columns over the training rows.
    #[default]
    Refit,
    /// `β̂₀ + Σ xⱼβ̃ⱼ` from the coordinatewise estimates.
    Plugin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSpec {
    pub grid: Vec<f64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub predictor: CvPredictor,
    /// Re-estimate neighborhoods inside each fold.
    #[serde(default)]
    pub rescn: bool,
}

fn default_folds() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    #[serde(flatten)]
    pub rule: SelectionRule,
    #[serde(default)]
    pub s_bar: Option<usize>,
    #[serde(default)]
    pub cv: Option<CvSpec>,
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        match &self.rule {
            SelectionRule::Raw { tau: Thresholds::Uniform(t) } if t.is_nan() || *t < 0.0 => {
                return Err(Error::OutOfRange(format!("tau = {t}")))
            }
            SelectionRule::Raw { tau: Thresholds::PerCoordinate(v) } if v.iter().any(|t| t.is_nan() || *t < 0.0) => {
                return Err(Error::OutOfRange("per-coordinate thresholds must be >= 0".into()))
            }
            SelectionRule::Studentized { tau_n } if tau_n.is_nan() || *tau_n < 0.0 => {
                return Err(Error::OutOfRange(format!("tau_n = {tau_n}")))
            }
            SelectionRule::PValue { alpha_tau, .. } if !(*alpha_tau > 0.0 && *alpha_tau < 1.0) => {
                return Err(Error::OutOfRange(format!("alpha_tau = {alpha_tau}")))
            }
            _ => {}
        }
        if self.s_bar == Some(0) {
            return Err(Error::OutOfRange("s_bar must be >= 1".into()));
        }
        if let Some(cv) = &self.cv {
            if cv.grid.is_empty() || cv.grid.iter().any(|t| t.is_nan() || *t < 0.0) {
                return Err(Error::OutOfRange("cv grid must be nonempty and >= 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateDecision {
    pub j: usize,
    /// `|β̃ⱼ|` (raw), `|z|` (studentized), or the compared p-value.
    pub statistic: f64,
    pub threshold: f64,
    pub p_raw: f64,
    pub p_adjusted: Option<f64>,
    /// Rule decision before any cap.
    pub decision: bool,
    /// Final membership after the cap.
    pub selected: bool,
    /// Zero variance: studentized statistic is infinite.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selected: Vec<usize>,
    pub rule_used: String,
    pub per_coordinate: Vec<CoordinateDecision>,
    pub cv_trace: Option<Vec<(f64, f64)>>,
    pub capped: bool,
}

fn check_distinct(estimates: &[CoordinateInference]) -> Result<()> {
    let mut js: Vec<usize> = estimates.iter().map(|e| e.j).collect();
    js.sort_unstable();
    if js.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidInput("duplicate coordinates in estimates".into()));
    }
    Ok(())
}

/// Apply the rule in `cfg` (with a fixed `τₙ`; CV is separate) and the cap.
pub fn threshold_select(estimates: &[CoordinateInference], cfg: &SelectionConfig) -> Result<SelectionResult> {
    cfg.validate()?;
    check_distinct(estimates)?;
    let (mut rows, rule_used) = match &cfg.rule {
        SelectionRule::Raw { tau } => {
            let rows = estimates
                .iter()
                .map(|e| {
                    let t = match tau {
                        Thresholds::Uniform(t) => Ok(*t),
                        Thresholds::PerCoordinate(v) => v.get(e.j).copied().ok_or(Error::DimensionMismatch {
                            expected: e.j + 1,
                            got: v.len(),
                        }),
                    }?;
                    let s = e.estimate.abs();
                    Ok(decision(e, s, t, s >= t, None))
                })
                .collect::<Result<Vec<_>>>()?;
            (rows, "raw |estimate| >= tau_j".to_string())
        }
        SelectionRule::Studentized { tau_n } => {
            let rows = estimates
                .iter()
                .map(|e| {
                    let s = e.z.abs();
                    decision(e, s, *tau_n, s >= *tau_n, None)
                })
                .collect();
            (rows, format!("studentized |z| >= {}", fmt_f64(*tau_n)))
        }
        SelectionRule::PValue { alpha_tau, adjust } => {
            let r = pvalue_select(estimates, *alpha_tau, *adjust)?;
            (r.per_coordinate, r.rule_used)
        }
    };
    let capped = apply_cap(&mut rows, estimates, &cfg.rule, cfg.s_bar);
    let mut selected: Vec<usize> = rows.iter().filter(|r| r.selected).map(|r| r.j).collect();
    selected.sort_unstable();
    Ok(SelectionResult {
        selected,
        rule_used,
        per_coordinate: rows,
        cv_trace: None,
        capped,
    })
}

fn decision(e: &CoordinateInference, statistic: f64, threshold: f64, keep: bool, p_adj: Option<f64>) -> CoordinateDecision {
    CoordinateDecision {
        j: e.j,
        statistic,
        threshold,
        p_raw: e.p_value,
        p_adjusted: p_adj,
        decision: keep,
        selected: keep,
        degenerate: e.degenerate,
    }
}

/// Keep the `s_bar` strongest decisions. Strength is `|z|` for the
/// studentized and p-value rules and `|estimate|` for the raw rule;
/// ties go to the lower index.
fn apply_cap(
    rows: &mut [CoordinateDecision],
    estimates: &[CoordinateInference],
    rule: &SelectionRule,
    s_bar: Option<usize>,
) -> bool {
    let Some(cap) = s_bar else { return false };
    let mut idx: Vec<usize> = (0..rows.len()).filter(|&k| rows[k].decision).collect();
    if idx.len() <= cap {
        return false;
    }
    let strength = |k: usize| match rule {
        SelectionRule::Raw { .. } => estimates[k].estimate.abs(),
        _ => estimates[k].z.abs(),
    };
    idx.sort_by(|&a, &b| {
        strength(b)
            .total_cmp(&strength(a))
            .then(rows[a].j.cmp(&rows[b].j))
    });
    for &k in &idx[cap..] {
        rows[k].selected = false;
    }
    true
}

/// Step-down Šidák adjustment, returned in input order.
pub fn holm_sidak_adjust(p_values: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = p_values.iter().find(|p| !(**p >= 0.0 && **p <= 1.0)) {
        return Err(Error::OutOfRange(format!("p-value {bad}")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; m];
    let mut running = 0.0_f64;
    for (k, &i) in order.iter().enumerate() {
        let p = p_values[i];
        // 1 − (1 − p)^e computed without cancellation for small p.
        let e = (m - k) as f64;
        let adj = -((e * (-p).ln_1p()).exp_m1());
        running = running.max(adj).min(1.0);
        out[i] = running;
    }
    Ok(out)
}

/// `{j : q̃ⱼ ≤ α_τ}` with `q̃` optionally Holm–Šidák adjusted. The
/// per-coordinate statistic is the compared p-value and the threshold is
/// `α_τ`, so here a coordinate is kept when `statistic ≤ threshold`.
pub fn pvalue_select(estimates: &[CoordinateInference], alpha_tau: f64, adjust: Adjust) -> Result<SelectionResult> {
    if !(alpha_tau > 0.0 && alpha_tau < 1.0) {
        return Err(Error::OutOfRange(format!("alpha_tau = {alpha_tau}")));
    }
    check_distinct(estimates)?;
    let raw: Vec<f64> = estimates.iter().map(|e| e.p_value).collect();
    let adjusted = match adjust {
        Adjust::None => None,
        Adjust::HolmSidak => Some(holm_sidak_adjust(&raw)?),
    };
    let rows: Vec<CoordinateDecision> = estimates
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let q = adjusted.as_ref().map_or(e.p_value, |a| a[k]);
            decision(e, q, alpha_tau, q <= alpha_tau, adjusted.as_ref().map(|a| a[k]))
        })
        .collect();
    let mut selected: Vec<usize> = rows.iter().filter(|r| r.selected).map(|r| r.j).collect();
    selected.sort_unstable();
    let cutoff = normal_quantile(1.0 - alpha_tau / 2.0)?;
    let rule_used = format!(
        "p-value q <= {} ({}; raw cutoff |z| >= {})",
        fmt_f64(alpha_tau),
        match adjust {
            Adjust::None => "unadjusted",
            Adjust::HolmSidak => "holm-sidak",
        },
        fmt_f64(cutoff)
    );
    Ok(SelectionResult {
        selected,
        rule_used,
        per_coordinate: rows,
        cv_trace: None,
        capped: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvThresholdOutcome {
    pub tau_n: f64,
    pub grid: Vec<f64>,
    /// `fold_mse[f][g]`: held-out error of fold `f` at grid point `g`.
    pub fold_mse: Vec<Vec<f64>>,
    pub mean_mse: Vec<f64>,
}

impl CvThresholdOutcome {
    pub fn trace(&self) -> Vec<(f64, f64)> {
        self.grid.iter().copied().zip(self.mean_mse.iter().copied()).collect()
    }
}

/// Choose `τₙ` for the studentized rule by K-fold CV over labeled rows.
///
/// For each fold, coordinatewise estimates are recomputed on the training
/// rows with the neighborhoods in `scn_list` (or with fold-wise neighborhoods
/// when `spec.rescn`), each `τₙ` selects a set, and the held-out error of the
/// predictor named by `spec.predictor` is recorded. An empty selection
/// predicts with the training mean. A selection too large for an OLS refit on
/// the training rows is cut to its strongest members. Ties go to the larger
/// `τₙ`.
#[allow(clippy::too_many_arguments)]
pub fn cv_threshold(
    sd: &StandardizedDataset,
    scn_list: &[ScnEstimate],
    method: Method,
    boost: &BoostConfig,
    spec: &CvSpec,
    s_bar: Option<usize>,
    scn_cfg: &ScnConfig,
) -> Result<CvThresholdOutcome> {
    if spec.grid.is_empty() || spec.grid.iter().any(|t| t.is_nan() || *t < 0.0) {
        return Err(Error::OutOfRange("cv grid must be nonempty and >= 0".into()));
    }
    if scn_list.len() != sd.p() {
        return Err(Error::DimensionMismatch {
            expected: sd.p(),
            got: scn_list.len(),
        });
    }
    if method == Method::DLasso {
        return Err(Error::InvalidInput("cv threshold needs an nlnr method".into()));
    }
    if spec.grid.len() == 1 {
        return Ok(CvThresholdOutcome {
            tau_n: spec.grid[0],
            grid: spec.grid.clone(),
            fold_mse: Vec::new(),
            mean_mse: vec![f64::NAN],
        });
    }
    let folds = kfold_split(sd.n(), spec.folds, spec.seed)?;
    let fold_mse: Vec<Vec<f64>> = (0..folds.k())
        .into_par_iter()
        .map(|f| {
            let train = folds.train_rows(f);
            let test = folds.test_rows(f);
            let est = fold_estimates(sd, scn_list, method, boost, &train, spec.rescn, scn_cfg, spec.seed)?;
            spec.grid
                .iter()
                .map(|&tau| {
                    let chosen = studentized_set(&est, tau, s_bar, train.len().saturating_sub(2));
                    held_out_error(sd, &est, &chosen, &train, &test, spec.predictor)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let k = fold_mse.len() as f64;
    let mean_mse: Vec<f64> = (0..spec.grid.len())
        .map(|g| fold_mse.iter().map(|row| row[g]).sum::<f64>() / k)
        .collect();
    let mut best = 0;
    for g in 1..spec.grid.len() {
        let better = mean_mse[g] < mean_mse[best]
            || (mean_mse[g] == mean_mse[best] && spec.grid[g] > spec.grid[best]);
        if better {
            best = g;
        }
    }
    Ok(CvThresholdOutcome {
        tau_n: spec.grid[best],
        grid: spec.grid.clone(),
        fold_mse,
        mean_mse,
    })
}

/// Coordinatewise estimates using only the `train` rows.
#[allow(clippy::too_many_arguments)]
fn fold_estimates(
    sd: &StandardizedDataset,
    scn_list: &[ScnEstimate],
    method: Method,
    boost: &BoostConfig,
    train: &[usize],
    rescn: bool,
    scn_cfg: &ScnConfig,
    seed: u64,
) -> Result<Vec<CoordinateInference>> {
    let fold_scn;
    let scn = if rescn {
        let sub = Dataset::new(
            sd.x_labeled().select(train, &(0..sd.p()).collect::<Vec<_>>()),
            train.iter().map(|&i| sd.y()[i]).collect(),
            (sd.n_unlabeled() > 0).then(|| sd.x_unlabeled().clone()),
            Some(sd.feature_names().to_vec()),
        )?;
        let sub_sd = crate::dataset::standardize_with(&sub, sd.center_mode())?;
        fold_scn = estimate_all_scn(&sub_sd, scn_cfg, seed)?;
        &fold_scn
    } else {
        scn_list
    };
    let (score_rows, refit_rows) = match method {
        Method::BoostedSplit => {
            let (i1, i2) = split_halves(train.len(), boost.split_seed);
            (
                i1.iter().map(|&k| train[k]).collect::<Vec<_>>(),
                i2.iter().map(|&k| train[k]).collect::<Vec<_>>(),
            )
        }
        _ => (train.to_vec(), train.to_vec()),
    };
    let scores = match method {
        Method::Nlnr => None,
        _ => Some(marginal_scores(sd, &score_rows)?),
    };
    (0..sd.p())
        .into_par_iter()
        .map(|j| {
            let set = match &scores {
                None => scn[j].xi.clone(),
                Some(s) => {
                    let d = boost.augmentation(train.len(), sd.p(), scn[j].xi.len());
                    boost_set(&scn[j].xi, s, d)?
                }
            };
            infer_on_rows(sd, &set, &refit_rows, 0.05, method)
        })
        .collect()
}

/// Studentized selection with an optional cap and a hard ceiling.
fn studentized_set(est: &[CoordinateInference], tau: f64, s_bar: Option<usize>, ceiling: usize) -> Vec<usize> {
    let mut keep: Vec<usize> = (0..est.len()).filter(|&k| est[k].z.abs() >= tau).collect();
    let limit = s_bar.unwrap_or(usize::MAX).min(ceiling);
    if keep.len() > limit {
        keep.sort_by(|&a, &b| est[b].z.abs().total_cmp(&est[a].z.abs()).then(a.cmp(&b)));
        keep.truncate(limit);
    }
    let mut js: Vec<usize> = keep.into_iter().map(|k| est[k].j).collect();
    js.sort_unstable();
    js
}

fn held_out_error(
    sd: &StandardizedDataset,
    est: &[CoordinateInference],
    chosen: &[usize],
    train: &[usize],
    test: &[usize],
    predictor: CvPredictor,
) -> Result<f64> {
    let y = sd.y();
    let x = sd.refit_design();
    let ybar = train.iter().map(|&i| y[i]).sum::<f64>() / train.len() as f64;
    let predict: Box<dyn Fn(usize) -> f64> = if chosen.is_empty() {
        Box::new(|_| ybar)
    } else {
        match predictor {
            CvPredictor::Plugin => {
                let coef: Vec<(usize, f64)> = chosen
                    .iter()
                    .map(|&j| {
                        let e = est.iter().find(|e| e.j == j).expect("estimate per coordinate");
                        (j, e.estimate * sd.pooled_scales()[j])
                    })
                    .collect();
                Box::new(move |i| ybar + coef.iter().map(|&(j, b)| x[(i, j)] * b).sum::<f64>())
            }
            CvPredictor::Refit => {
                let (xbar, b) = ols_with_intercept(x, y, chosen, train)?;
                let chosen = chosen.to_vec();
                Box::new(move |i| {
                    ybar + chosen
                        .iter()
                        .zip(&b)
                        .zip(&xbar)
                        .map(|((&j, bj), mj)| (x[(i, j)] - mj) * bj)
                        .sum::<f64>()
                })
            }
        }
    };
    let sse: f64 = test.iter().map(|&i| (y[i] - predict(i)).powi(2)).sum();
    Ok(sse / test.len() as f64)
}

/// OLS with intercept on `rows`; returns the column means and slopes.
fn ols_with_intercept(x: &Matrix, y: &[f64], cols: &[usize], rows: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = rows.len() as f64;
    let q = cols.len();
    let mut xbar = vec![0.0; q];
    for &i in rows {
        for (a, &j) in cols.iter().enumerate() {
            xbar[a] += x[(i, j)];
        }
    }
    xbar.iter_mut().for_each(|v| *v /= m);
    let ybar = rows.iter().map(|&i| y[i]).sum::<f64>() / m;
    let mut g = Matrix::zeros(q, q);
    let mut xty = vec![0.0; q];
    let mut xc = vec![0.0; q];
    for &i in rows {
        for (a, &j) in cols.iter().enumerate() {
            xc[a] = x[(i, j)] - xbar[a];
        }
        let dy = y[i] - ybar;
        for a in 0..q {
            xty[a] += xc[a] * dy;
            for b in a..q {
                g[(a, b)] += xc[a] * xc[b];
            }
        }
    }
    for a in 0..q {
        for b in 0..a {
            g[(a, b)] = g[(b, a)];
        }
    }
    let f = cholesky(&SymMatrix::new(g)?, 0.0).map_err(|e| match e {
        Error::NotPositiveDefinite(_) => Error::SingularWorkingGram(cols.to_vec()),
        other => other,
    })?;
    Ok((xbar, solve_spd(&f, &xty)?))
}

/// All coordinates ranked by marginal score over the labeled rows, ties to
/// the lower index.
pub fn sis_ranking(sd: &StandardizedDataset) -> Result<Vec<usize>> {
    let rows: Vec<usize> = (0..sd.n()).collect();
    let s = marginal_scores(sd, &rows)?;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    Ok(order)
}

/// The `top_m` coordinates of [`sis_ranking`], in ascending index order.
pub fn sis_prescreen(sd: &StandardizedDataset, top_m: usize) -> Result<Vec<usize>> {
    if top_m == 0 || top_m > sd.p() {
        return Err(Error::BadCount { count: top_m, p: sd.p() });
    }
    let mut keep = sis_ranking(sd)?;
    keep.truncate(top_m);
    keep.sort_unstable();
    Ok(keep)
}

pub fn write_selection<W: Write>(out: W, names: &[String], result: &SelectionResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["j", "name", "statistic", "threshold", "p_raw", "p_adjusted", "selected", "capped"])?;
    for r in &result.per_coordinate {
        w.write_record([
            r.j.to_string(),
            names.get(r.j).cloned().unwrap_or_default(),
            fmt_f64(r.statistic),
            fmt_f64(r.threshold),
            fmt_f64(r.p_raw),
            r.p_adjusted.map(fmt_f64).unwrap_or_default(),
            r.selected.to_string(),
            (r.decision && !r.selected).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cv_trace<W: Write>(out: W, cv: &CvThresholdOutcome) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tau", "fold", "mse", "mean_mse"])?;
    for (g, &tau) in cv.grid.iter().enumerate() {
        for (f, row) in cv.fold_mse.iter().enumerate() {
            w.write_record([fmt_f64(tau), f.to_string(), fmt_f64(row[g]), fmt_f64(cv.mean_mse[g])])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_selection_file(path: &Path, names: &[String], result: &SelectionResult) -> Result<()> {
    write_selection(std::fs::File::create(path)?, names, result)
}
