//! Comparison estimators: the full-model lasso and the debiased lasso.
//!
//! Both use labeled rows only, with columns centered on their labeled means.
//! The debiased lasso takes the one-step correction
//! `β̂ᵈ = β̂ + Θ̂ Xᵀ(y − Xβ̂)/n` with `Θ̂` built row by row from nodewise lasso
//! fits, and variance `σ̂²_ε θ̂ⱼᵀ Σ̂ θ̂ⱼ / n`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{fmt_f64, kfold_split, StandardizedDataset};
use crate::error::{Error, Result};
use crate::lasso::{cv_lambda, fit_lasso, GridSpec, LassoProblem, RawStats, SolverOptions};
use crate::nlnr::{CoordinateInference, Method};
use crate::numerics::Matrix;
use crate::scn::{collect_coordinates, LambdaRule, NeighborhoodCap, PooledStats, ScnConfig};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DLassoConfig {
    #[serde(default)]
    pub main_lambda: LambdaRule,
    #[serde(default)]
    pub nodewise_lambda: LambdaRule,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub solver: SolverOptions,
}

/// Labeled design centered on labeled means, plus centered response.
fn centered_labeled(sd: &StandardizedDataset) -> (Matrix, Vec<f64>) {
    let mut x = sd.refit_design().clone();
    let n = x.nrows();
    let p = x.ncols();
    let mut means = vec![0.0; p];
    for i in 0..n {
        for (m, v) in means.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    for i in 0..n {
        for (v, m) in x.row_mut(i).iter_mut().zip(&means) {
            *v -= m;
        }
    }
    let ybar = sd.labeled_y_mean();
    (x, sd.y().iter().map(|v| v - ybar).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FullLasso {
    /// Coefficients in original covariate units.
    pub coefficients: Vec<f64>,
    /// Coefficients on the standardized columns.
    pub standardized: Vec<f64>,
    pub lambda: f64,
}

fn full_lasso_on(
    x: &Matrix,
    y: &[f64],
    rule: &LambdaRule,
    grid: &GridSpec,
    solver: &SolverOptions,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    let n = x.nrows();
    let stats = RawStats::from_design(x, y).normalized();
    let lambda = match *rule {
        LambdaRule::Fixed { lambda } => lambda,
        LambdaRule::Theoretical {
            alpha_tilde,
            c_lambda,
        } => crate::lasso::theoretical_lambda(n, alpha_tilde, c_lambda)?,
        LambdaRule::Cv { folds } => {
            let lmax = stats.lambda_max();
            if lmax <= 0.0 {
                0.0
            } else {
                let g = grid.build(lmax, n, x.ncols());
                cv_lambda(x, y, &g, &kfold_split(n, folds, seed)?, solver)?.lambda
            }
        }
    };
    let fit = fit_lasso(
        &LassoProblem {
            design: x,
            target: y,
            lambda,
        },
        solver,
        None,
    )?;
    Ok((fit.coefficients, lambda))
}

/// Lasso of the centered response on all labeled columns, λ by `folds`-fold CV.
pub fn fit_full_lasso(sd: &StandardizedDataset, folds: usize, seed: u64) -> Result<FullLasso> {
    fit_full_lasso_with(sd, &LambdaRule::Cv { folds }, &GridSpec::default(), &SolverOptions::default(), seed)
}

pub fn fit_full_lasso_with(
    sd: &StandardizedDataset,
    rule: &LambdaRule,
    grid: &GridSpec,
    solver: &SolverOptions,
    seed: u64,
) -> Result<FullLasso> {
    if let LambdaRule::Cv { folds } = *rule {
        if folds < 2 || folds > sd.n() {
            return Err(Error::BadFoldCount { n: sd.n(), k: folds });
        }
    }
    let (x, y) = centered_labeled(sd);
    let (standardized, lambda) = full_lasso_on(&x, &y, rule, grid, solver, seed)?;
    let coefficients = standardized
        .iter()
        .zip(sd.pooled_scales())
        .map(|(b, s)| b / s)
        .collect();
    Ok(FullLasso {
        coefficients,
        standardized,
        lambda,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DebiasedFit {
    pub estimates: Vec<f64>,
    pub variances: Vec<f64>,
    pub lasso_coefs: Vec<f64>,
    pub lambda_main: f64,
    pub nodewise_lambdas: Vec<f64>,
    pub inference: Vec<CoordinateInference>,
}

pub fn debiased_lasso(
    sd: &StandardizedDataset,
    cfg: &DLassoConfig,
    seed: u64,
    alpha: f64,
) -> Result<DebiasedFit> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::OutOfRange(format!("alpha = {alpha}")));
    }
    let (x, y) = centered_labeled(sd);
    let n = x.nrows();
    let p = x.ncols();
    let (beta, lambda_main) = full_lasso_on(&x, &y, &cfg.main_lambda, &cfg.grid, &cfg.solver, seed)?;

    let node_cfg = ScnConfig {
        lambda_rule: cfg.nodewise_lambda,
        max_neighborhood: NeighborhoodCap::None,
        grid: cfg.grid,
        solver: cfg.solver,
    };
    let node_stats = PooledStats::from_design(&x, crate::scn::fold_count(&node_cfg), seed)?;
    let nodewise = collect_coordinates(
        (0..p)
            .into_par_iter()
            .map(|j| node_stats.estimate(j, &node_cfg))
            .collect(),
    )?;

    let resid: Vec<f64> = {
        let fitted = x.matvec(&beta)?;
        y.iter().zip(&fitted).map(|(a, b)| a - b).collect()
    };
    let support = beta.iter().filter(|b| **b != 0.0).count();
    let df = n.saturating_sub(support).max(1) as f64;
    let sigma2 = resid.iter().map(|e| e * e).sum::<f64>() / df;
    let xtr = x.transpose().matvec(&resid)?;
    let mut sigma_hat = x.gram_rows(0..n);
    sigma_hat.scale(1.0 / n as f64);

    let per: Vec<Result<CoordinateInference>> = (0..p)
        .into_par_iter()
        .map(|j| {
            let node = &nodewise[j];
            let mut theta = vec![0.0; p];
            theta[j] = 1.0;
            for k in 0..p {
                if k != j {
                    theta[k] = -node.eta_for(k);
                }
            }
            // τ̂² = x_jᵀ(x_j − X₋ⱼη̂)/n = (Σ̂ θ)_j before scaling
            let sigma_theta = sigma_hat.matvec(&theta)?;
            let tau2 = sigma_theta[j];
            if !(tau2 > 1e-12) {
                return Err(Error::DegenerateTau(j));
            }
            theta.iter_mut().for_each(|t| *t /= tau2);
            let correction = crate::numerics::dot(&theta, &xtr) / n as f64;
            let est_std = beta[j] + correction;
            let quad = crate::numerics::dot(&theta, &sigma_theta) / tau2;
            let var_std = sigma2 * quad / n as f64;
            let scale = sd.pooled_scales()[j];
            let mut ws = vec![j];
            ws.extend_from_slice(&node.omega);
            CoordinateInference::from_parts(
                j,
                est_std / scale,
                var_std / (scale * scale),
                alpha,
                Method::DLasso,
                ws,
                n,
            )
        })
        .collect();
    let inference = collect_coordinates(per)?;
    Ok(DebiasedFit {
        estimates: inference.iter().map(|c| c.estimate).collect(),
        variances: inference.iter().map(|c| c.variance).collect(),
        lasso_coefs: beta.iter().zip(sd.pooled_scales()).map(|(b, s)| b / s).collect(),
        lambda_main,
        nodewise_lambdas: nodewise.iter().map(|e| e.lambda_used).collect(),
        inference,
    })
}

/// Point-estimate CSV for the plain lasso.
pub fn write_lasso_csv<W: Write>(out: W, names: &[String], fit: &FullLasso) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["j", "name", "method", "estimate", "lambda"])?;
    for (j, b) in fit.coefficients.iter().enumerate() {
        w.write_record([
            j.to_string(),
            names.get(j).cloned().unwrap_or_default(),
            "lasso".to_string(),
            fmt_f64(*b),
            fmt_f64(fit.lambda),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{standardize, Dataset};

    #[test]
    fn zero_at_lambda_max() {
        let x = Matrix::from_rows(&[
            vec![1.0, 0.3],
            vec![-0.4, 1.0],
            vec![0.2, -0.7],
            vec![-0.9, 0.1],
            vec![0.5, -0.6],
        ])
        .unwrap();
        let sd = standardize(&Dataset::new(x, vec![0.4, 0.1, -0.3, -0.5, 0.2], None, None).unwrap()).unwrap();
        let (xc, yc) = centered_labeled(&sd);
        let lmax = RawStats::from_design(&xc, &yc).normalized().lambda_max();
        let fit = fit_full_lasso_with(
            &sd,
            &LambdaRule::Fixed { lambda: lmax },
            &GridSpec::default(),
            &SolverOptions::default(),
            0,
        )
        .unwrap();
        assert!(fit.coefficients.iter().all(|b| *b == 0.0));
    }
}
