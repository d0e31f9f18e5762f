use crate::error::{DapError, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const PCA_TOL: f64 = 1e-10;
const PCA_MAX_ITERS: usize = 10_000;

/// Project mean-centered data onto its top `out_dim` principal
/// components via power iteration with deflation. Explained variance is
/// the sample covariance eigenvalue (1/(n-1) convention) per component.
/// Eigenvector signs are fixed so the first nonzero coordinate is
/// positive; the start vector comes from a fixed seed, so output is
/// bitwise reproducible.
pub fn pca_project(data: &[Vec<f64>], out_dim: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let n = data.len();
    if n < 2 {
        return Err(DapError::Contract("pca_project: need at least 2 points".into()));
    }
    let d = data[0].len();
    if data.iter().any(|r| r.len() != d) || d == 0 {
        return Err(DapError::Shape("pca_project: ragged or empty rows".into()));
    }
    if out_dim == 0 || out_dim > d {
        return Err(DapError::Contract(format!(
            "pca_project: out_dim {out_dim} not in 1..={d}"
        )));
    }
    let mut mean = vec![0.0; d];
    for row in data {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    let centered: Vec<Vec<f64>> = data
        .iter()
        .map(|row| row.iter().zip(&mean).map(|(&v, &m)| v - m).collect())
        .collect();
    // sample covariance, deflated in place as components are extracted
    let mut cov = vec![vec![0.0; d]; d];
    for row in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += row[i] * row[j] / (n - 1) as f64;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(out_dim);
    let mut variances = Vec::with_capacity(out_dim);
    for _ in 0..out_dim {
        let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        normalize(&mut v);
        let mut lambda = 0.0;
        let mut converged = false;
        for _ in 0..PCA_MAX_ITERS {
            let mut w = vec![0.0; d];
            for i in 0..d {
                for j in 0..d {
                    w[i] += cov[i][j] * v[j];
                }
            }
            lambda = w.iter().zip(&v).map(|(&a, &b)| a * b).sum();
            // converged when v is an eigenvector up to tolerance; this also
            // terminates immediately on deflated zero-variance subspaces
            let residual = w
                .iter()
                .zip(&v)
                .map(|(&a, &b)| (a - lambda * b).abs())
                .fold(0.0, f64::max);
            if residual <= PCA_TOL * lambda.abs().max(1.0) {
                converged = true;
                break;
            }
            if normalize(&mut w) == 0.0 {
                lambda = 0.0;
                converged = true;
                break;
            }
            v = w;
        }
        if !converged {
            return Err(DapError::Numeric(format!(
                "pca_project: power iteration did not converge in {PCA_MAX_ITERS} iterations"
            )));
        }
        if let Some(first) = v.iter().find(|&&x| x != 0.0) {
            if *first < 0.0 {
                for x in &mut v {
                    *x = -*x;
                }
            }
        }
        for i in 0..d {
            for j in 0..d {
                cov[i][j] -= lambda * v[i] * v[j];
            }
        }
        variances.push(lambda);
        components.push(v);
    }

    let points = centered
        .iter()
        .map(|row| {
            components
                .iter()
                .map(|c| row.iter().zip(c).map(|(&a, &b)| a * b).sum())
                .collect()
        })
        .collect();
    Ok((points, variances))
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}
