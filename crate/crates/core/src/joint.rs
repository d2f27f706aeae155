//! Joint Wald test for a fixed coordinate subset `T`.
//!
//! The response is regressed on `T` together with the union of the targets'
//! neighborhoods. The leading `|T|` block of the full sandwich covariance is
//! the covariance of `γ̃_T`, and `γ̃ᵀ A⁻¹ γ̃` is referred to `χ²(|T|)`.

use serde::{Deserialize, Serialize};

use crate::dataset::StandardizedDataset;
use crate::error::{Error, Result};
use crate::nlnr::fit_working_ols;
use crate::numerics::{chi_square_sf, cholesky, solve_spd, Matrix, SymMatrix};
use crate::scn::ScnEstimate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointInference {
    pub t: Vec<usize>,
    /// `γ̃_T` in original covariate units.
    pub estimate: Vec<f64>,
    /// Covariance of `estimate`, `1/n` factor included.
    pub covariance: SymMatrix,
    pub wald: f64,
    pub df: usize,
    pub p_value: f64,
    pub working_set: Vec<usize>,
    /// Working set larger than `√n`.
    pub oversized: bool,
}

impl JointInference {
    /// Whether `beta_t` lies in the `1 − alpha` Wald confidence region.
    pub fn region_contains(&self, beta_t: &[f64], alpha: f64) -> Result<bool> {
        if beta_t.len() != self.t.len() {
            return Err(Error::DimensionMismatch {
                expected: self.t.len(),
                got: beta_t.len(),
            });
        }
        let d: Vec<f64> = self.estimate.iter().zip(beta_t).map(|(a, b)| a - b).collect();
        let f = cholesky(&self.covariance, 0.0).map_err(|_| Error::SingularCovariance(self.t.clone()))?;
        let stat = crate::numerics::dot(&d, &solve_spd(&f, &d)?);
        Ok(chi_square_sf(stat, self.df)? >= alpha)
    }
}

/// `T` in the given order, then the other members of `∪ Ξ̃ⱼ` ascending.
pub fn joint_working_set(t: &[usize], scn_list: &[ScnEstimate]) -> Result<Vec<usize>> {
    if t.is_empty() {
        return Err(Error::InvalidInput("empty target set".into()));
    }
    let p = scn_list.len();
    let mut in_t = vec![false; p];
    for &j in t {
        if j >= p {
            return Err(Error::OutOfRange(format!("coordinate {j} with p = {p}")));
        }
        if in_t[j] {
            return Err(Error::InvalidInput(format!("duplicate target {j}")));
        }
        in_t[j] = true;
    }
    let mut extra = vec![false; p];
    for &j in t {
        let e = &scn_list[j];
        if e.j != j {
            return Err(Error::InvalidInput(format!("neighborhood list out of order at {j}")));
        }
        for &k in &e.xi {
            if !in_t[k] {
                extra[k] = true;
            }
        }
    }
    let mut out = t.to_vec();
    out.extend((0..p).filter(|&k| extra[k]));
    Ok(out)
}

/// Full sandwich covariance `Σ̂⁻¹ E_m[x xᵀ ε̂²] Σ̂⁻¹ / m` of all working slopes.
pub fn sandwich_covariance(fit: &crate::nlnr::WorkingFit) -> Matrix {
    let q = fit.set.len();
    let m = fit.m() as f64;
    let mut meat = Matrix::zeros(q, q);
    for (i, &e) in fit.residuals.iter().enumerate() {
        let x = fit.design.row(i);
        let w = e * e;
        for a in 0..q {
            let xa = x[a] * w;
            let row = meat.row_mut(a);
            for b in 0..q {
                row[b] += xa * x[b];
            }
        }
    }
    meat.scale(1.0 / m);
    let inv = fit.gram_inv.matrix();
    let mut out = inv.matmul(&meat).and_then(|t| t.matmul(inv)).expect("square blocks");
    out.scale(1.0 / m);
    out
}

pub fn joint_infer(
    t: &[usize],
    sd: &StandardizedDataset,
    scn_list: &[ScnEstimate],
    alpha: f64,
) -> Result<JointInference> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::OutOfRange(format!("alpha = {alpha}")));
    }
    if scn_list.len() != sd.p() {
        return Err(Error::DimensionMismatch {
            expected: sd.p(),
            got: scn_list.len(),
        });
    }
    let set = joint_working_set(t, scn_list)?;
    let rows: Vec<usize> = (0..sd.n()).collect();
    let fit = fit_working_ols(sd, &set, &rows)?;
    let full = sandwich_covariance(&fit);
    let k = t.len();
    let scales: Vec<f64> = t.iter().map(|&j| sd.pooled_scales()[j]).collect();
    let estimate: Vec<f64> = (0..k).map(|a| fit.slopes[a] / scales[a]).collect();
    let mut block = Matrix::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            block[(a, b)] = full[(a, b)] / (scales[a] * scales[b]);
        }
    }
    let covariance = SymMatrix::symmetrize(block)?;
    let f = cholesky(&covariance, 0.0).map_err(|_| Error::SingularCovariance(t.to_vec()))?;
    let wald = crate::numerics::dot(&estimate, &solve_spd(&f, &estimate)?);
    let p_value = chi_square_sf(wald, k)?;
    let oversized = (set.len() as f64) > (sd.n() as f64).sqrt();
    Ok(JointInference {
        t: t.to_vec(),
        estimate,
        covariance,
        wald,
        df: k,
        p_value,
        working_set: set,
        oversized,
    })
}

#[derive(Serialize)]
struct JointReport<'a> {
    targets: &'a [usize],
    target_names: Vec<String>,
    estimates: &'a [f64],
    covariance: Vec<f64>,
    wald: f64,
    df: usize,
    p_value: f64,
    working_set: &'a [usize],
    oversized: bool,
}

/// JSON report with the covariance flattened row-major.
pub fn joint_report_json(j: &JointInference, names: &[String]) -> Result<String> {
    let report = JointReport {
        targets: &j.t,
        target_names: j.t.iter().map(|&k| names.get(k).cloned().unwrap_or_default()).collect(),
        estimates: &j.estimate,
        covariance: j.covariance.matrix().as_slice().to_vec(),
        wald: j.wald,
        df: j.df,
        p_value: j.p_value,
        working_set: &j.working_set,
        oversized: j.oversized,
    };
    Ok(serde_json::to_string_pretty(&report)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scn(j: usize, omega: &[usize], p: usize) -> ScnEstimate {
        let mut xi = vec![j];
        xi.extend_from_slice(omega);
        ScnEstimate {
            j,
            eta: vec![0.0; p - 1],
            omega: omega.to_vec(),
            xi,
            lambda_used: 0.0,
            truncated: false,
        }
    }

    #[test]
    fn working_set_examples() {
        let mut list: Vec<ScnEstimate> = (0..10).map(|j| scn(j, &[], 10)).collect();
        list[3] = scn(3, &[5, 9], 10);
        assert_eq!(joint_working_set(&[3], &list).unwrap(), vec![3, 5, 9]);
        list[1] = scn(1, &[2, 7], 10);
        list[2] = scn(2, &[1, 7], 10);
        assert_eq!(joint_working_set(&[1, 2], &list).unwrap(), vec![1, 2, 7]);
        let all: Vec<usize> = (0..10).rev().collect();
        assert_eq!(joint_working_set(&all, &list).unwrap(), all);
        assert!(joint_working_set(&[1, 1], &list).is_err());
    }
}
