//! Conditional-neighborhood recovery by nodewise lasso on the pooled sample.
//!
//! Each coordinate is regressed on all others over the labeled and unlabeled
//! rows together. The nonzero coefficients form the estimated neighborhood,
//! and the working set used downstream is the target followed by that
//! neighborhood.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{fmt_f64, kfold_split, StandardizedDataset};
use crate::error::{Error, Result};
use crate::lasso::{cv_from_stats, fit_stats, theoretical_lambda, GridSpec, RawStats, SolverOptions};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum LambdaRule {
    Cv { folds: usize },
    Theoretical { alpha_tilde: f64, c_lambda: f64 },
    /// A fixed penalty, mostly for experiments and tests.
    Fixed { lambda: f64 },
}

impl Default for LambdaRule {
    fn default() -> Self {
        LambdaRule::Cv { folds: 5 }
    }
}

/// Limit on the number of neighbors kept per coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighborhoodCap {
    /// `⌊√n⌋ − 1` with `n` the labeled sample size.
    #[default]
    Auto,
    Limit(usize),
    None,
}

impl NeighborhoodCap {
    pub fn resolve(&self, n_labeled: usize) -> Option<usize> {
        match *self {
            NeighborhoodCap::Auto => Some(((n_labeled as f64).sqrt().floor() as usize).saturating_sub(1).max(1)),
            NeighborhoodCap::Limit(c) => Some(c),
            NeighborhoodCap::None => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScnConfig {
    #[serde(default)]
    pub lambda_rule: LambdaRule,
    #[serde(default)]
    pub max_neighborhood: NeighborhoodCap,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub solver: SolverOptions,
}

impl ScnConfig {
    fn validate(&self) -> Result<()> {
        if let NeighborhoodCap::Limit(0) = self.max_neighborhood {
            return Err(Error::OutOfRange("max_neighborhood must be >= 1".into()));
        }
        match self.lambda_rule {
            LambdaRule::Cv { folds } if folds < 2 => {
                Err(Error::OutOfRange(format!("cv folds = {folds}")))
            }
            LambdaRule::Fixed { lambda } if !(lambda >= 0.0) || !lambda.is_finite() => {
                Err(Error::OutOfRange(format!("lambda = {lambda}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScnEstimate {
    pub j: usize,
    /// Coefficients on the other `p − 1` columns in ascending column order.
    pub eta: Vec<f64>,
    pub omega: Vec<usize>,
    /// Target first, then `omega`.
    pub xi: Vec<usize>,
    pub lambda_used: f64,
    pub truncated: bool,
}

impl ScnEstimate {
    /// Column index of `eta[k]`.
    pub fn column_of(&self, k: usize) -> usize {
        if k < self.j {
            k
        } else {
            k + 1
        }
    }

    /// Coefficient on column `col`; zero for the target itself.
    pub fn eta_for(&self, col: usize) -> f64 {
        match col.cmp(&self.j) {
            std::cmp::Ordering::Less => self.eta[col],
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Greater => self.eta[col - 1],
        }
    }
}

/// Pooled cross-products shared by every nodewise regression.
pub struct PooledStats {
    full: Matrix,
    folds: Vec<Matrix>,
    fold_rows: Vec<usize>,
    n_total: usize,
    n_labeled: usize,
}

impl PooledStats {
    /// Cross-products over the pooled labeled and unlabeled rows.
    /// `folds = 0` skips the fold blocks (no cross-validation needed).
    pub fn new(sd: &StandardizedDataset, folds: usize, seed: u64) -> Result<Self> {
        let mut out = Self::build(sd.n_total(), sd.p(), |i| sd.pooled_row(i), folds, seed)?;
        out.n_labeled = sd.n();
        Ok(out)
    }

    /// Cross-products over the rows of `x`; the neighborhood cap resolves
    /// against `x.nrows()`.
    pub fn from_design(x: &Matrix, folds: usize, seed: u64) -> Result<Self> {
        Self::build(x.nrows(), x.ncols(), |i| x.row(i), folds, seed)
    }

    fn build<'a>(
        n_total: usize,
        q: usize,
        row: impl Fn(usize) -> &'a [f64],
        folds: usize,
        seed: u64,
    ) -> Result<Self> {
        let gram_of = |idx: &mut dyn Iterator<Item = usize>| {
            let mut g = Matrix::zeros(q, q);
            for i in idx {
                let r = row(i);
                for a in 0..q {
                    let ra = r[a];
                    let grow = g.row_mut(a);
                    for b in a..q {
                        grow[b] += ra * r[b];
                    }
                }
            }
            for a in 0..q {
                for b in 0..a {
                    g[(a, b)] = g[(b, a)];
                }
            }
            g
        };
        let mut blocks = Vec::with_capacity(folds);
        let mut rows = Vec::with_capacity(folds);
        let full = if folds == 0 {
            gram_of(&mut (0..n_total))
        } else {
            let assign = kfold_split(n_total, folds, seed)?;
            let mut full = Matrix::zeros(q, q);
            for f in 0..folds {
                let idx = assign.test_rows(f);
                let g = gram_of(&mut idx.iter().copied());
                full.add_assign(&g);
                blocks.push(g);
                rows.push(idx.len());
            }
            full
        };
        Ok(Self {
            full,
            folds: blocks,
            fold_rows: rows,
            n_total,
            n_labeled: n_total,
        })
    }

    fn nodewise(g: &Matrix, j: usize, rows: usize) -> RawStats {
        let p = g.ncols();
        let others: Vec<usize> = (0..p).filter(|&k| k != j).collect();
        RawStats {
            gram: g.select(&others, &others),
            xty: others.iter().map(|&k| g[(k, j)]).collect(),
            yty: g[(j, j)],
            rows,
        }
    }

    pub fn estimate(&self, j: usize, cfg: &ScnConfig) -> Result<ScnEstimate> {
        cfg.validate()?;
        let p = self.full.ncols();
        if j >= p {
            return Err(Error::OutOfRange(format!("coordinate {j} with p = {p}")));
        }
        let full = Self::nodewise(&self.full, j, self.n_total);
        let norm = full.normalized();
        let lambda = match cfg.lambda_rule {
            LambdaRule::Fixed { lambda } => lambda,
            LambdaRule::Theoretical {
                alpha_tilde,
                c_lambda,
            } => theoretical_lambda(self.n_total, alpha_tilde, c_lambda)?,
            LambdaRule::Cv { folds } => {
                if self.folds.len() != folds {
                    return Err(Error::InvalidInput(format!(
                        "pooled statistics carry {} folds, config wants {folds}",
                        self.folds.len()
                    )));
                }
                let lmax = norm.lambda_max();
                if lmax <= 0.0 {
                    lmax
                } else {
                    let grid = cfg.grid.build(lmax, self.n_total, p - 1);
                    let held: Vec<RawStats> = self
                        .folds
                        .iter()
                        .zip(&self.fold_rows)
                        .map(|(g, &rows)| Self::nodewise(g, j, rows))
                        .collect();
                    cv_from_stats(&full, &held, &grid, &cfg.solver)?.lambda
                }
            }
        };
        let fit = fit_stats(&norm, lambda, &cfg.solver, None)?;
        if !fit.converged {
            return Err(Error::NotConverged(Box::new(fit)));
        }
        let mut eta = fit.coefficients;
        let mut active: Vec<usize> = (0..eta.len()).filter(|&k| eta[k] != 0.0).collect();
        let mut truncated = false;
        if let Some(cap) = cfg.max_neighborhood.resolve(self.n_labeled) {
            if active.len() > cap {
                truncated = true;
                let mut ranked = active.clone();
                ranked.sort_by(|&a, &b| eta[b].abs().total_cmp(&eta[a].abs()).then(a.cmp(&b)));
                for &k in &ranked[cap..] {
                    eta[k] = 0.0;
                }
                active.retain(|&k| eta[k] != 0.0);
            }
        }
        let omega: Vec<usize> = active.iter().map(|&k| if k < j { k } else { k + 1 }).collect();
        let mut xi = Vec::with_capacity(omega.len() + 1);
        xi.push(j);
        xi.extend_from_slice(&omega);
        Ok(ScnEstimate {
            j,
            eta,
            omega,
            xi,
            lambda_used: lambda,
            truncated,
        })
    }
}

pub(crate) fn fold_count(cfg: &ScnConfig) -> usize {
    match cfg.lambda_rule {
        LambdaRule::Cv { folds } => folds,
        _ => 0,
    }
}

/// Nodewise lasso for coordinate `j`. Cross-validation folds are drawn over
/// the pooled rows from `seed`, so the same seed gives the same folds for
/// every coordinate.
pub fn estimate_scn(
    j: usize,
    sd: &StandardizedDataset,
    cfg: &ScnConfig,
    seed: u64,
) -> Result<ScnEstimate> {
    cfg.validate()?;
    if j >= sd.p() {
        return Err(Error::OutOfRange(format!("coordinate {j} with p = {}", sd.p())));
    }
    PooledStats::new(sd, fold_count(cfg), seed)?.estimate(j, cfg)
}

/// Estimates for every coordinate, in index order.
pub fn estimate_all_scn(
    sd: &StandardizedDataset,
    cfg: &ScnConfig,
    seed: u64,
) -> Result<Vec<ScnEstimate>> {
    cfg.validate()?;
    let stats = PooledStats::new(sd, fold_count(cfg), seed)?;
    let results: Vec<Result<ScnEstimate>> = (0..sd.p())
        .into_par_iter()
        .map(|j| stats.estimate(j, cfg))
        .collect();
    collect_coordinates(results)
}

/// Estimates for the listed coordinates only, in the given order. The shared
/// statistics are built once, so this matches [`estimate_all_scn`] entry by
/// entry.
pub fn estimate_scn_subset(
    coords: &[usize],
    sd: &StandardizedDataset,
    cfg: &ScnConfig,
    seed: u64,
) -> Result<Vec<ScnEstimate>> {
    cfg.validate()?;
    if let Some(&j) = coords.iter().find(|&&j| j >= sd.p()) {
        return Err(Error::OutOfRange(format!("coordinate {j} with p = {}", sd.p())));
    }
    let stats = PooledStats::new(sd, fold_count(cfg), seed)?;
    let results: Vec<Result<ScnEstimate>> = coords
        .par_iter()
        .map(|&j| stats.estimate(j, cfg))
        .collect();
    let mut ok = Vec::with_capacity(coords.len());
    let mut failed = Vec::new();
    for (&j, r) in coords.iter().zip(results) {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => failed.push((j, Box::new(e))),
        }
    }
    if failed.is_empty() {
        Ok(ok)
    } else {
        Err(Error::CoordinateFailures(failed))
    }
}

pub(crate) fn collect_coordinates<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    let mut ok = Vec::with_capacity(results.len());
    let mut failed = Vec::new();
    for (j, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => failed.push((j, Box::new(e))),
        }
    }
    if failed.is_empty() {
        Ok(ok)
    } else {
        Err(Error::CoordinateFailures(failed))
    }
}

/// CSV with one row per (coordinate, neighbor); coordinates with an empty
/// neighborhood get a single row with blank neighbor fields.
pub fn write_neighborhoods<W: Write>(out: W, estimates: &[ScnEstimate]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["j", "neighbor", "eta_value", "lambda", "truncated"])?;
    for e in estimates {
        let lambda = fmt_f64(e.lambda_used);
        let trunc = e.truncated.to_string();
        if e.omega.is_empty() {
            w.write_record([e.j.to_string().as_str(), "", "", &lambda, &trunc])?;
        }
        for &k in &e.omega {
            w.write_record([
                e.j.to_string(),
                k.to_string(),
                fmt_f64(e.eta_for(k)),
                lambda.clone(),
                trunc.clone(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_neighborhoods_file(path: &Path, estimates: &[ScnEstimate]) -> Result<()> {
    write_neighborhoods(std::fs::File::create(path)?, estimates)
}
