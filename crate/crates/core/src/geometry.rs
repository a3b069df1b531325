//! Embedding-space primitives: unit-ball projection, distances, similarity,
//! batch standardization and hubness statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2};

/// Norm slack allowed when checking that Manhattan inputs lie in the unit ball.
pub const UNIT_BALL_SLACK: f64 = 1e-9;

/// Distance used for nearest-prototype classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    /// L1 distance between vectors projected into the unit ball.
    Manhattan,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" | "cossim" => Ok(Metric::Cosine),
            "manhattan" | "l1" => Ok(Metric::Manhattan),
            other => Err(Error::invalid(format!("unknown metric `{other}`"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Cosine => "cosine",
            Metric::Manhattan => "manhattan",
        })
    }
}

/// `x / max(1, ‖x‖₂)`.
pub fn project_unit_sphere(x: &[f64]) -> Vec<f64> {
    let n = norm2(x);
    if n <= 1.0 {
        x.to_vec()
    } else {
        x.iter().map(|v| v / n).collect()
    }
}

/// Back-propagates `grad` (w.r.t. the projected vector) through
/// [`project_unit_sphere`] evaluated at `x`.
pub fn project_unit_sphere_backward(x: &[f64], grad: &[f64]) -> Vec<f64> {
    let n = norm2(x);
    if n <= 1.0 {
        return grad.to_vec();
    }
    // J = (I - x̂x̂ᵀ) / ‖x‖
    let g_dot_x = dot(grad, x) / n;
    grad.iter()
        .zip(x)
        .map(|(g, xi)| (g - g_dot_x * xi / n) / n)
        .collect()
}

/// `(Σ |a_d − b_d|^k)^{1/k}`.
pub fn lk_distance(a: &[f64], b: &[f64], k: f64) -> Result<f64> {
    Error::check_dim(a.len(), b.len())?;
    if !(k > 0.0) {
        return Err(Error::invalid(format!("norm order k must be > 0, got {k}")));
    }
    if k == 1.0 {
        return Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum());
    }
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs().powf(k)).sum();
    Ok(s.powf(1.0 / k))
}

/// `1 − aᵀb / (‖a‖‖b‖)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    Error::check_dim(a.len(), b.len())?;
    let (na, nb) = (norm2(a), norm2(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine distance of a zero-norm vector"));
    }
    let c = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
    Ok(1.0 - c)
}

fn check_unit_ball(v: &[f64]) -> Result<()> {
    let n = norm2(v);
    if n > 1.0 + UNIT_BALL_SLACK {
        return Err(Error::invalid(format!(
            "manhattan inputs must be projected into the unit ball (norm {n})"
        )));
    }
    Ok(())
}

/// Metric distance. Manhattan inputs must already lie in the unit ball.
pub fn distance(a: &[f64], b: &[f64], metric: Metric) -> Result<f64> {
    match metric {
        Metric::Cosine => cosine_distance(a, b),
        Metric::Manhattan => {
            check_unit_ball(a)?;
            check_unit_ball(b)?;
            lk_distance(a, b, 1.0)
        }
    }
}

/// Distance and its gradient with respect to `a`.
///
/// The Manhattan subgradient is 0 on coordinates where `a_d == b_d`.
pub fn distance_with_grad(a: &[f64], b: &[f64], metric: Metric) -> Result<(f64, Vec<f64>)> {
    let d = distance(a, b, metric)?;
    let grad = match metric {
        Metric::Cosine => {
            let (na, nb) = (norm2(a), norm2(b));
            let ab = dot(a, b);
            // d = 1 - ab/(na nb); ∂/∂a = -(b/(na nb) - ab·a/(na³ nb))
            a.iter()
                .zip(b)
                .map(|(ai, bi)| -(bi / (na * nb) - ab * ai / (na * na * na * nb)))
                .collect()
        }
        Metric::Manhattan => a
            .iter()
            .zip(b)
            .map(|(ai, bi)| match ai.partial_cmp(bi) {
                Some(std::cmp::Ordering::Greater) => 1.0,
                Some(std::cmp::Ordering::Less) => -1.0,
                _ => 0.0,
            })
            .collect(),
    };
    Ok((d, grad))
}

/// `1 − d(a, b) / 2`.
///
/// For the cosine metric this lies in `[0, 1]`. For Manhattan it is only
/// bounded above by 1: two points of the unit ball can be up to `2√D` apart
/// in L1.
pub fn similarity(a: &[f64], b: &[f64], metric: Metric) -> Result<f64> {
    Ok(1.0 - distance(a, b, metric)? / 2.0)
}

/// Similarity and its gradient with respect to `a`.
pub fn similarity_with_grad(a: &[f64], b: &[f64], metric: Metric) -> Result<(f64, Vec<f64>)> {
    let (d, mut g) = distance_with_grad(a, b, metric)?;
    g.iter_mut().for_each(|v| *v *= -0.5);
    Ok((1.0 - d / 2.0, g))
}

/// Per-dimension z-scores over the batch (population std). Constant
/// dimensions map to 0.
pub fn zscore_standardize(queries: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if queries.len() < 2 {
        return Err(Error::invalid("z-score standardization needs at least 2 vectors"));
    }
    let dim = queries[0].len();
    for q in queries {
        Error::check_dim(dim, q.len())?;
    }
    let n = queries.len() as f64;
    let mut mean = vec![0.0; dim];
    for q in queries {
        mean.iter_mut().zip(q).for_each(|(m, v)| *m += v / n);
    }
    let mut var = vec![0.0; dim];
    for q in queries {
        var.iter_mut()
            .zip(q.iter().zip(&mean))
            .for_each(|(s, (v, m))| *s += (v - m) * (v - m) / n);
    }
    let std: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    Ok(queries
        .iter()
        .map(|q| {
            q.iter()
                .zip(mean.iter().zip(&std))
                .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HubnessReport {
    pub k: usize,
    /// How often each prototype appears among the `k` nearest prototypes of a query.
    pub k_occurrence: Vec<usize>,
    /// Population skewness of `k_occurrence`; 0 when the counts have no spread.
    pub skewness: f64,
}

/// Indices of the `k` nearest prototypes to `query` (ties by lower index).
pub fn k_nearest(query: &[f64], prototypes: &[Vec<f64>], k: usize, metric: Metric) -> Result<Vec<usize>> {
    let mut d: Vec<(f64, usize)> = prototypes
        .iter()
        .enumerate()
        .map(|(i, p)| distance(query, p, metric).map(|d| (d, i)))
        .collect::<Result<_>>()?;
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(d.into_iter().take(k).map(|(_, i)| i).collect())
}

/// k-occurrence statistics of `prototypes` as neighbours of `queries`.
///
/// For the Manhattan metric both sides are projected into the unit ball first.
pub fn hubness(queries: &[Vec<f64>], prototypes: &[Vec<f64>], k: usize, metric: Metric) -> Result<HubnessReport> {
    if queries.is_empty() {
        return Err(Error::invalid("hubness needs at least one query"));
    }
    if k == 0 || k > prototypes.len() {
        return Err(Error::invalid(format!(
            "k must be in 1..={}, got {k}",
            prototypes.len()
        )));
    }
    let prepare = |v: &Vec<f64>| match metric {
        Metric::Cosine => v.clone(),
        Metric::Manhattan => project_unit_sphere(v),
    };
    let protos: Vec<Vec<f64>> = prototypes.iter().map(prepare).collect();
    let mut counts = vec![0usize; protos.len()];
    for q in queries {
        for i in k_nearest(&prepare(q), &protos, k, metric)? {
            counts[i] += 1;
        }
    }
    Ok(HubnessReport {
        k,
        skewness: skewness(&counts),
        k_occurrence: counts,
    })
}

fn skewness(counts: &[usize]) -> f64 {
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<usize>() as f64 / n;
    let m2 = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n;
    let m3 = counts.iter().map(|&c| (c as f64 - mean).powi(3)).sum::<f64>() / n;
    if m2 <= f64::EPSILON * mean.abs().max(1.0) {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

/// Dense `H×W×D` per-pixel embeddings, row-major with the embedding innermost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMap {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl EmbeddingMap {
    pub fn zeros(height: usize, width: usize, dim: usize) -> Self {
        EmbeddingMap {
            height,
            width,
            dim,
            data: vec![0.0; height * width * dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.dim == 0 {
            return Err(Error::invalid("embedding map must be non-empty"));
        }
        Error::check_dim(self.height * self.width * self.dim, self.data.len())?;
        if !self.data.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("embedding map has non-finite entries"));
        }
        Ok(())
    }

    fn offset(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.dim
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let o = self.offset(x, y);
        &self.data[o..o + self.dim]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let o = self.offset(x, y);
        &mut self.data[o..o + self.dim]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_branches() {
        let x = vec![0.3, 0.4];
        assert_eq!(project_unit_sphere(&x), x);
        let y = project_unit_sphere(&[0.0, 2.0]);
        assert!((norm2(&y) - 1.0).abs() < 1e-15);
        assert_eq!(project_unit_sphere(&y), y);
    }

    #[test]
    fn lk_cases() {
        assert_eq!(lk_distance(&[1.0, 2.0], &[1.0, 2.0], 1.0).unwrap(), 0.0);
        assert_eq!(lk_distance(&[1.0, 0.0], &[0.0, 1.0], 1.0).unwrap(), 2.0);
        assert!((lk_distance(&[1.0, 0.0], &[0.0, 1.0], 2.0).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(lk_distance(&[1.0], &[1.0, 2.0], 1.0).is_err());
        assert!(lk_distance(&[1.0], &[2.0], 0.0).is_err());
    }

    #[test]
    fn cosine_cases() {
        assert!(cosine_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap().abs() < 1e-15);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 1.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[-2.0, 0.0]).unwrap(), 2.0);
        assert!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn similarity_cases() {
        assert!((similarity(&[1.0, 1.0], &[1.0, 1.0], Metric::Cosine).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(similarity(&[1.0, 0.0], &[0.0, 1.0], Metric::Cosine).unwrap(), 0.5);
        assert_eq!(similarity(&[1.0, 0.0], &[-1.0, 0.0], Metric::Cosine).unwrap(), 0.0);
        assert_eq!(similarity(&[0.5, 0.0], &[0.5, 0.0], Metric::Manhattan).unwrap(), 1.0);
        assert!(similarity(&[2.0, 0.0], &[0.5, 0.0], Metric::Manhattan).is_err());
    }

    #[test]
    fn zscore_cases() {
        let z = zscore_standardize(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(z, vec![vec![-1.0], vec![1.0]]);
        let z = zscore_standardize(&[vec![3.0, 1.0], vec![3.0, 2.0]]).unwrap();
        assert_eq!(z[0][0], 0.0);
        assert_eq!(z[1][0], 0.0);
        assert!(zscore_standardize(&[vec![1.0]]).is_err());
    }

    #[test]
    fn hubness_cases() {
        let q: Vec<Vec<f64>> = (0..7).map(|i| vec![1.0, i as f64]).collect();
        let r = hubness(&q, &[vec![1.0, 0.0]], 1, Metric::Cosine).unwrap();
        assert_eq!(r.k_occurrence, vec![7]);
        assert_eq!(r.skewness, 0.0);

        let protos = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        let q = vec![vec![1.0, 0.1], vec![-1.0, 0.1], vec![1.0, -0.1], vec![-1.0, -0.1]];
        let r = hubness(&q, &protos, 1, Metric::Cosine).unwrap();
        assert_eq!(r.k_occurrence, vec![2, 2]);
        assert_eq!(r.skewness, 0.0);

        assert!(hubness(&[], &protos, 1, Metric::Cosine).is_err());
        assert!(hubness(&q, &protos, 3, Metric::Cosine).is_err());
    }

    #[test]
    fn planted_hub() {
        let protos: Vec<Vec<f64>> = (0..4)
            .map(|i| {
                let mut v = vec![0.0; 4];
                v[i] = 1.0;
                v
            })
            .collect();
        let q: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![1.0, 0.01 * i as f64, 0.02, 0.0])
            .collect();
        let r = hubness(&q, &protos, 1, Metric::Cosine).unwrap();
        assert_eq!(r.k_occurrence[0], 10);
        assert!(r.skewness > 0.0);
        let r2 = hubness(&q, &protos, 2, Metric::Manhattan).unwrap();
        assert_eq!(r2.k_occurrence.iter().sum::<usize>(), 20);
    }

    #[test]
    fn projection_backward_matches_finite_differences() {
        let x = [1.5, -0.7, 0.2];
        let g = [0.3, 0.9, -0.4];
        let an = project_unit_sphere_backward(&x, &g);
        let f = |v: &[f64]| dot(&project_unit_sphere(v), &g);
        for i in 0..3 {
            let mut p = x.to_vec();
            p[i] += 1e-6;
            let mut m = x.to_vec();
            m[i] -= 1e-6;
            let fd = (f(&p) - f(&m)) / 2e-6;
            assert!((fd - an[i]).abs() < 1e-8);
        }
    }
}
