#![allow(dead_code)]

use nlnr::dataset::Dataset;
use nlnr::numerics::Matrix;
use nlnr::scn::ScnEstimate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

pub fn gauss_vec(r: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| gauss(r)).collect()
}

pub fn gauss_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, gauss_vec(r, rows * cols)).unwrap()
}

/// Dense solve by Gaussian elimination with partial pivoting.
pub fn gauss_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(r, &v)| {
        let mut r = r.clone();
        r.push(v);
        r
    }).collect();
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&i, &k| m[i][c].abs().total_cmp(&m[k][c].abs()))
            .unwrap();
        m.swap(c, piv);
        for i in c + 1..n {
            let f = m[i][c] / m[c][c];
            for k in c..=n {
                m[i][k] -= f * m[c][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for c in (0..n).rev() {
        let s: f64 = (c + 1..n).map(|k| m[c][k] * x[k]).sum();
        x[c] = (m[c][n] - s) / m[c][c];
    }
    x
}

pub fn gauss_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|c| {
            let e: Vec<f64> = (0..n).map(|i| if i == c { 1.0 } else { 0.0 }).collect();
            gauss_solve(a, &e)
        })
        .collect();
    (0..n).map(|i| (0..n).map(|c| cols[c][i]).collect()).collect()
}

/// Random data with shifted, rescaled columns and a linear response.
pub fn random_dataset(r: &mut ChaCha8Rng, n: usize, n_unlabeled: usize, p: usize) -> Dataset {
    let loc: Vec<f64> = (0..p).map(|_| 5.0 * gauss(r)).collect();
    let scale: Vec<f64> = (0..p).map(|_| r.random_range(0.2..4.0)).collect();
    let draw = |rows: usize, r: &mut ChaCha8Rng| {
        let mut m = gauss_matrix(r, rows, p);
        for i in 0..rows {
            for (j, v) in m.row_mut(i).iter_mut().enumerate() {
                *v = loc[j] + scale[j] * *v;
            }
        }
        m
    };
    let x = draw(n, r);
    let u = (n_unlabeled > 0).then(|| draw(n_unlabeled, r));
    let beta = gauss_vec(r, p);
    let y: Vec<f64> = (0..n)
        .map(|i| 1.0 + nlnr::numerics::dot(x.row(i), &beta) + gauss(r))
        .collect();
    Dataset::new(x, y, u, None).unwrap()
}

/// Pooled means and divisor-(rows − 1) scales over labeled and unlabeled rows.
pub fn pooled_moments(d: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let p = d.p();
    let rows: Vec<&[f64]> = (0..d.n())
        .map(|i| d.x_labeled().row(i))
        .chain((0..d.n_unlabeled()).map(|i| d.x_unlabeled().row(i)))
        .collect();
    let t = rows.len() as f64;
    let mean: Vec<f64> = (0..p).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / t).collect();
    let sd: Vec<f64> = (0..p)
        .map(|j| (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / (t - 1.0)).sqrt())
        .collect();
    (mean, sd)
}

/// Neighborhood for `j` with the given neighbors and no penalty information.
pub fn manual_scn(j: usize, p: usize, omega: &[usize]) -> ScnEstimate {
    let mut omega = omega.to_vec();
    omega.sort_unstable();
    let mut xi = vec![j];
    xi.extend(&omega);
    ScnEstimate {
        j,
        eta: vec![0.0; p - 1],
        omega,
        xi,
        lambda_used: 0.0,
        truncated: false,
    }
}

/// Random neighbor subset of size up to `max` excluding `j`.
pub fn random_omega(r: &mut ChaCha8Rng, j: usize, p: usize, max: usize) -> Vec<usize> {
    let k = r.random_range(0..=max.min(p - 1));
    let mut pool: Vec<usize> = (0..p).filter(|&c| c != j).collect();
    let mut out = Vec::new();
    for _ in 0..k {
        let i = r.random_range(0..pool.len());
        out.push(pool.swap_remove(i));
    }
    out.sort_unstable();
    out
}

/// Working-set OLS from raw data: pooled standardization, `y` centered on its
/// labeled mean, no intercept column. Returns original-unit slopes and the
/// sandwich covariance of those slopes.
pub fn oracle_working_fit(d: &Dataset, set: &[usize]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (mean, sd) = pooled_moments(d);
    let n = d.n();
    let q = set.len();
    let x: Vec<Vec<f64>> = (0..n)
        .map(|i| set.iter().map(|&c| (d.x_labeled().row(i)[c] - mean[c]) / sd[c]).collect())
        .collect();
    let ybar = d.y().iter().sum::<f64>() / n as f64;
    let yc: Vec<f64> = d.y().iter().map(|v| v - ybar).collect();
    let mut xtx = vec![vec![0.0; q]; q];
    let mut xty = vec![0.0; q];
    for i in 0..n {
        for a in 0..q {
            xty[a] += x[i][a] * yc[i];
            for b in 0..q {
                xtx[a][b] += x[i][a] * x[i][b];
            }
        }
    }
    let slopes = gauss_solve(&xtx, &xty);
    let nf = n as f64;
    let sigma: Vec<Vec<f64>> = xtx.iter().map(|r| r.iter().map(|v| v / nf).collect()).collect();
    let inv = gauss_inverse(&sigma);
    let mut meat = vec![vec![0.0; q]; q];
    for i in 0..n {
        let e = yc[i] - (0..q).map(|a| x[i][a] * slopes[a]).sum::<f64>();
        for a in 0..q {
            for b in 0..q {
                meat[a][b] += x[i][a] * x[i][b] * e * e / nf;
            }
        }
    }
    let mut cov = vec![vec![0.0; q]; q];
    for a in 0..q {
        for b in 0..q {
            let mut s = 0.0;
            for u in 0..q {
                for v in 0..q {
                    s += inv[a][u] * meat[u][v] * inv[v][b];
                }
            }
            cov[a][b] = s / nf / (sd[set[a]] * sd[set[b]]);
        }
    }
    let orig: Vec<f64> = (0..q).map(|a| slopes[a] / sd[set[a]]).collect();
    (orig, cov)
}

/// `rows` draws from N(0, sigma) through its Cholesky factor.
pub fn sample_gaussian(r: &mut ChaCha8Rng, sigma: &nlnr::numerics::SymMatrix, rows: usize) -> Matrix {
    let f = nlnr::numerics::cholesky(sigma, 0.0).unwrap();
    let l = f.lower();
    let p = sigma.dim();
    let mut out = Matrix::zeros(rows, p);
    for i in 0..rows {
        let z = gauss_vec(r, p);
        let row = out.row_mut(i);
        for a in 0..p {
            row[a] = (0..=a).map(|b| l[(a, b)] * z[b]).sum();
        }
    }
    out
}

/// Covariance with unit diagonal whose inverse has the support of `theta`.
pub fn unit_covariance(theta: &[Vec<f64>]) -> nlnr::numerics::SymMatrix {
    let s = gauss_inverse(theta);
    let p = s.len();
    let rows: Vec<Vec<f64>> = (0..p)
        .map(|i| (0..p).map(|j| s[i][j] / (s[i][i] * s[j][j]).sqrt()).collect())
        .collect();
    nlnr::numerics::SymMatrix::symmetrize(Matrix::from_rows(&rows).unwrap()).unwrap()
}

/// Labeled plus unlabeled draws with a linear response on the labeled rows.
pub fn gaussian_dataset(r: &mut ChaCha8Rng, sigma: &nlnr::numerics::SymMatrix, n: usize, nu: usize, beta: &[f64]) -> Dataset {
    let x = sample_gaussian(r, sigma, n);
    let u = (nu > 0).then(|| sample_gaussian(r, sigma, nu));
    let y = (0..n).map(|i| nlnr::numerics::dot(x.row(i), beta) + gauss(r)).collect();
    Dataset::new(x, y, u, None).unwrap()
}
