use crate::tensor::Tensor;
use crate::{Error, Result, Warned};

const TOLERANCE: f64 = 1e-9;
const MAX_ITERATIONS: usize = 1000;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn mat_vec(c: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    c.chunks_exact(d).map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// Leading eigenvector of the symmetric PSD matrix `c`, kept orthogonal to `avoid`.
fn power_iteration(c: &[f64], d: usize, avoid: Option<&[f64]>) -> Option<(Vec<f64>, f64)> {
    let orthogonalize = |v: &mut Vec<f64>| {
        if let Some(u) = avoid {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
    };
    // fixed, non-symmetric start so runs are reproducible
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + i as f64 / d as f64).collect();
    orthogonalize(&mut v);
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut lambda = 0.0;
    for _ in 0..MAX_ITERATIONS {
        let mut w = mat_vec(c, &v);
        orthogonalize(&mut w);
        lambda = norm(&w);
        if lambda <= f64::EPSILON {
            return None;
        }
        w.iter_mut().for_each(|x| *x /= lambda);
        let delta = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        if delta < TOLERANCE {
            break;
        }
    }
    // sign convention: largest-magnitude component positive
    let lead = v.iter().fold(0.0f64, |m, &x| if x.abs() > m.abs() { x } else { m });
    if lead < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    Some((v, lambda))
}

/// Projects `[n, d]` rows onto their top two principal directions.
///
/// Zero-variance input maps every row to `(0, 0)` with a warning; rank-one
/// input leaves the second coordinate at 0.
pub fn project_features(features: &Tensor) -> Result<Warned<Tensor>> {
    let s = features.shape();
    if s.len() != 2 || s[0] < 2 || s[1] < 2 {
        return Err(Error::Parameter(format!("projection needs an n×d matrix with n, d ≥ 2, got {s:?}")));
    }
    let (n, d) = (s[0], s[1]);
    let mut mean = vec![0.0; d];
    for row in features.data().chunks_exact(d) {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x / n as f64);
    }
    let centered: Vec<f64> = features
        .data()
        .chunks_exact(d)
        .flat_map(|row| row.iter().zip(&mean).map(|(x, m)| x - m).collect::<Vec<_>>())
        .collect();
    let mut cov = vec![0.0; d * d];
    for row in centered.chunks_exact(d) {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += row[i] * row[j] / (n - 1) as f64;
            }
        }
    }

    let mut warnings = Vec::new();
    let mut axes: Vec<Vec<f64>> = Vec::new();
    match power_iteration(&cov, d, None) {
        None => warnings.push("features have zero variance; projection is all zeros".to_string()),
        Some((v1, _)) => {
            if let Some((v2, _)) = power_iteration(&cov, d, Some(&v1)) {
                axes.push(v1);
                axes.push(v2);
            } else {
                axes.push(v1);
            }
        }
    }
    let mut out = vec![0.0; n * 2];
    for (r, row) in centered.chunks_exact(d).enumerate() {
        for (a, axis) in axes.iter().enumerate() {
            out[r * 2 + a] = row.iter().zip(axis).map(|(x, y)| x * y).sum();
        }
    }
    Ok(Warned::new(Tensor::new([n, 2], out)?, warnings))
}
