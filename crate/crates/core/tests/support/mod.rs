//! Brute-force and textbook reference implementations the library is
//! checked against. None of them call into the crate's numerics.

#![allow(dead_code)]

use std::collections::BTreeMap;

/// Singular values of a dense matrix given as rows, by one-sided
/// Jacobi rotations, in non-increasing order.
pub fn jacobi_singular_values(a: &[Vec<f64>]) -> Vec<f64> {
    let (m, n) = (a.len(), a[0].len());
    // Work on the orientation with fewer columns.
    let mut cols: Vec<Vec<f64>> = if n <= m {
        (0..n).map(|j| (0..m).map(|i| a[i][j]).collect()).collect()
    } else {
        a.to_vec()
    };
    let k = cols.len();
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..k {
            for q in (p + 1)..k {
                let alpha: f64 = cols[p].iter().map(|x| x * x).sum();
                let beta: f64 = cols[q].iter().map(|x| x * x).sum();
                let gamma: f64 = cols[p].iter().zip(&cols[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..cols[p].len() {
                    let (x, y) = (cols[p][i], cols[q][i]);
                    cols[p][i] = c * x - s * y;
                    cols[q][i] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut sv: Vec<f64> = cols.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// Frobenius error of the best rank-`k` approximation.
pub fn optimal_rank_k_error(singular_values: &[f64], k: usize) -> f64 {
    singular_values[k..].iter().map(|s| s * s).sum::<f64>().sqrt()
}

/// Minimum over injective row → column maps of the summed cost.
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == cost.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                go(cost, row + 1, used, acc + cost[row][j], best);
                used[j] = false;
            }
        }
    }
    let cols = cost.first().map_or(0, Vec::len);
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cols], 0.0, &mut best);
    if cost.is_empty() {
        0.0
    } else {
        best
    }
}

/// Path from `node` up to the root, `node` first.
pub fn ancestors(parent: &BTreeMap<String, String>, node: &str) -> Vec<String> {
    let mut out = vec![node.to_owned()];
    let mut cur = node;
    while let Some(p) = parent.get(cur) {
        out.push(p.clone());
        cur = p;
    }
    out
}

/// `2·depth(lca) / (depth(a) + depth(b))` with the root at depth 1.
pub fn wup(parent: &BTreeMap<String, String>, a: &str, b: &str) -> f64 {
    let pa = ancestors(parent, a);
    let pb = ancestors(parent, b);
    let lca = pa.iter().find(|n| pb.contains(n)).expect("common root");
    let depth = |n: &str| ancestors(parent, n).len() as f64;
    2.0 * depth(lca) / (pa.len() + pb.len()) as f64
}

/// Connected components of the graph linking pairs with WUP ≥ threshold,
/// as sorted member lists.
pub fn wup_components(parent: &BTreeMap<String, String>, classes: &[String], threshold: f64) -> Vec<Vec<String>> {
    let n = classes.len();
    let mut label: Vec<usize> = (0..n).collect();
    // Repeated relaxation until no label changes.
    loop {
        let mut changed = false;
        for i in 0..n {
            for j in 0..n {
                if i != j && wup(parent, &classes[i], &classes[j]) >= threshold && label[j] < label[i] {
                    label[i] = label[j];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (i, c) in classes.iter().enumerate() {
        groups.entry(label[i]).or_default().push(c.clone());
    }
    let mut out: Vec<Vec<String>> = groups
        .into_values()
        .map(|mut g| {
            g.sort();
            g
        })
        .collect();
    out.sort();
    out
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Area under the upper precision envelope of a ranked hit list, with
/// `n_gt` groundtruth boxes.
pub fn envelope_ap(hits: &[bool], n_gt: usize) -> f64 {
    let mut tp = 0.0;
    let mut pts = vec![];
    for (i, h) in hits.iter().enumerate() {
        if *h {
            tp += 1.0;
        }
        pts.push((tp / n_gt as f64, tp / (i + 1) as f64));
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (i, &(r, _)) in pts.iter().enumerate() {
        let env = pts[i..].iter().map(|p| p.1).fold(0.0, f64::max);
        ap += (r - prev_r) * env;
        prev_r = r;
    }
    ap
}

/// A random set-matching problem in plain arrays.
pub struct MatchingInstance {
    pub predictions: Vec<([f64; 4], Vec<f64>)>,
    pub groundtruth: Vec<([f64; 4], usize)>,
    pub prototypes: Vec<Vec<f64>>,
    pub image_size: (f64, f64),
}

pub fn random_box<R: rand::Rng>(rng: &mut R, w: f64, h: f64) -> [f64; 4] {
    let x1 = rng.random_range(0.0..w - 2.0);
    let y1 = rng.random_range(0.0..h - 2.0);
    [x1, y1, rng.random_range(x1 + 1.0..w), rng.random_range(y1 + 1.0..h)]
}

/// Up to `max_gt` groundtruth objects and up to `max_gt + 1` predictions.
pub fn matching_instance<R: rand::Rng>(rng: &mut R, max_gt: usize) -> MatchingInstance {
    let (w, h) = (rng.random_range(32.0..128.0), rng.random_range(32.0..128.0));
    let classes = rng.random_range(2..=5);
    let dim = rng.random_range(3..=6);
    let gauss = |rng: &mut R| -> Vec<f64> { (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let prototypes: Vec<Vec<f64>> = (0..classes).map(|_| gauss(rng)).collect();
    let n_gt = rng.random_range(1..=max_gt);
    let n_pred = rng.random_range(n_gt..=max_gt + 1);
    MatchingInstance {
        predictions: (0..n_pred).map(|_| (random_box(rng, w, h), gauss(rng))).collect(),
        groundtruth: (0..n_gt).map(|_| (random_box(rng, w, h), rng.random_range(1..=classes))).collect(),
        prototypes,
        image_size: (w, h),
    }
}

fn area(b: &[f64; 4]) -> f64 {
    (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0)
}

/// Generalized IoU from box areas.
pub fn giou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let inter = area(&[a[0].max(b[0]), a[1].max(b[1]), a[2].min(b[2]), a[3].min(b[3])]);
    let union = area(a) + area(b) - inter;
    let hull = area(&[a[0].min(b[0]), a[1].min(b[1]), a[2].max(b[2]), a[3].max(b[3])]);
    inter / union - (hull - union) / hull
}

/// Matching cost under the cosine metric with weights (1, 2, 5).
pub fn cosine_match_cost(pred: &([f64; 4], Vec<f64>), gt: &([f64; 4], usize), protos: &[Vec<f64>], size: (f64, f64)) -> f64 {
    let t = &protos[gt.1 - 1];
    let dot: f64 = pred.1.iter().zip(t).map(|(x, y)| x * y).sum();
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let sim = ((1.0 + dot / (n(&pred.1) * n(t))) / 2.0).clamp(1e-6, 1.0);
    let scale = [size.0, size.1, size.0, size.1];
    let l1: f64 = (0..4).map(|i| (pred.0[i] - gt.0[i]).abs() / scale[i]).sum();
    -sim.ln() + 2.0 * (1.0 - giou(&pred.0, &gt.0)) + 5.0 * l1
}

/// `n` orthonormal vectors of length `dim` by Gram-Schmidt on uniform draws.
pub fn orthonormal_rows<R: rand::Rng>(rng: &mut R, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    while rows.len() < n {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        for _ in 0..2 {
            for r in &rows {
                let p: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(x, y)| *x -= p * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    rows
}

/// An embedding map with Gaussian bumps toward class prototypes planted on
/// a background direction orthogonal to every prototype.
pub struct PlantedMap {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub data: Vec<f64>,
    pub prototypes: Vec<Vec<f64>>,
    /// `(x, y, class id)`, class ids from 1.
    pub centers: Vec<(usize, usize, usize)>,
}

pub fn planted_map<R: rand::Rng>(rng: &mut R) -> PlantedMap {
    let (height, width) = (rng.random_range(6..=32), rng.random_range(6..=32));
    let classes = rng.random_range(1..=4);
    let dim = classes + 3;
    let basis = orthonormal_rows(rng, classes + 2, dim);
    let prototypes = basis[..classes].to_vec();
    let (background, jitter_dir) = (&basis[classes], &basis[classes + 1]);
    let target = rng.random_range(1..=6);
    let mut centers: Vec<(usize, usize, usize)> = Vec::new();
    for _ in 0..200 {
        if centers.len() == target {
            break;
        }
        let (x, y) = (rng.random_range(0..width), rng.random_range(0..height));
        if centers.iter().all(|&(cx, cy, _)| cx.abs_diff(x).max(cy.abs_diff(y)) >= 5) {
            centers.push((x, y, rng.random_range(1..=classes)));
        }
    }
    let mut data = vec![0.0; height * width * dim];
    for y in 0..height {
        for x in 0..width {
            let px = &mut data[(y * width + x) * dim..][..dim];
            let jitter = rng.random_range(-0.05..0.05);
            for k in 0..dim {
                px[k] = background[k] + jitter * jitter_dir[k];
            }
            for &(cx, cy, c) in &centers {
                let r2 = (cx as f64 - x as f64).powi(2) + (cy as f64 - y as f64).powi(2);
                let a = 5.0 * (-r2 / 2.0).exp();
                px.iter_mut().zip(&prototypes[c - 1]).for_each(|(p, t)| *p += a * t);
            }
        }
    }
    centers.sort_by_key(|&(x, y, c)| (c, y, x));
    PlantedMap {
        height,
        width,
        dim,
        data,
        prototypes,
        centers,
    }
}
