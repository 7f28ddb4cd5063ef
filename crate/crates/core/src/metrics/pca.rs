use serde::{Deserialize, Serialize};

use super::embedding::EmbeddingDump;
use crate::error::{Error, Result};

const TOL: f64 = 1e-9;
const MAX_ITER: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRow {
    pub task: usize,
    pub class: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub rows: Vec<ProjectionRow>,
    /// Unit principal directions, sign-fixed.
    pub components: [Vec<f64>; 2],
    /// Variance captured by each component.
    pub explained_variance: [f64; 2],
    pub total_variance: f64,
    /// Set when fewer than two non-zero singular values exist; `y` is then zero.
    pub rank_deficient: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mat_vec(c: &[f64], d: usize, v: &[f64]) -> Vec<f64> {
    (0..d).map(|i| dot(&c[i * d..(i + 1) * d], v)).collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Leading eigenpair of a symmetric PSD matrix by power iteration.
fn power_iteration(c: &[f64], d: usize) -> (f64, Vec<f64>) {
    // Deterministic start that is unlikely to be orthogonal to the target.
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.1 * i as f64 / d as f64).collect();
    normalize(&mut v);
    for _ in 0..MAX_ITER {
        let mut w = mat_vec(c, d, &v);
        if normalize(&mut w) == 0.0 {
            return (0.0, v);
        }
        let aligned = if dot(&w, &v) < 0.0 { -1.0 } else { 1.0 };
        let delta = w
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - aligned * b).abs())
            .fold(0.0, f64::max);
        v = w;
        if delta < TOL {
            break;
        }
    }
    let lambda = dot(&v, &mat_vec(c, d, &v));
    (lambda, v)
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Mean-centred projection onto the top two principal directions.
pub fn pca_project_2d(dump: &EmbeddingDump) -> Result<Projection> {
    let n = dump.rows.len();
    let d = dump.dim;
    if n < 2 || d < 2 {
        return Err(Error::contract(format!("PCA needs ≥2 samples and ≥2 dims, got {n}×{d}")));
    }
    let mut mean = vec![0.0; d];
    for r in &dump.rows {
        mean.iter_mut().zip(&r.values).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred: Vec<Vec<f64>> = dump
        .rows
        .iter()
        .map(|r| r.values.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let mut cov = vec![0.0; d * d];
    for x in &centred {
        for i in 0..d {
            if x[i] == 0.0 {
                continue;
            }
            for j in 0..d {
                cov[i * d + j] += x[i] * x[j];
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= (n - 1) as f64);
    let total_variance: f64 = (0..d).map(|i| cov[i * d + i]).sum();

    let (l1, mut v1) = power_iteration(&cov, d);
    fix_sign(&mut v1);
    let mut deflated = cov.clone();
    for i in 0..d {
        for j in 0..d {
            deflated[i * d + j] -= l1 * v1[i] * v1[j];
        }
    }
    let (l2, mut v2) = power_iteration(&deflated, d);
    let floor = 1e-12 * l1.abs().max(f64::MIN_POSITIVE);
    let rank_deficient = l1 <= f64::MIN_POSITIVE || l2 <= floor;
    if rank_deficient {
        log::warn!("embedding covariance has rank < 2; second projection axis set to zero");
        v2 = vec![0.0; d];
    } else {
        // Re-orthogonalize against the first axis before fixing the sign.
        let p = dot(&v2, &v1);
        v2.iter_mut().zip(&v1).for_each(|(a, b)| *a -= p * b);
        normalize(&mut v2);
        fix_sign(&mut v2);
    }
    let rows = dump
        .rows
        .iter()
        .zip(&centred)
        .map(|(r, x)| ProjectionRow {
            task: r.task,
            class: r.class,
            x: dot(x, &v1),
            y: if rank_deficient { 0.0 } else { dot(x, &v2) },
        })
        .collect();
    Ok(Projection {
        rows,
        components: [v1, v2],
        explained_variance: [l1.max(0.0), if rank_deficient { 0.0 } else { l2.max(0.0) }],
        total_variance,
        rank_deficient,
    })
}
