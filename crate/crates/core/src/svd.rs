//! Truncated SVD by symmetric power iteration with Hotelling deflation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, Matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvdOptions {
    /// Relative change of the Rayleigh quotient that counts as converged.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SvdOptions {
    fn default() -> Self {
        SvdOptions {
            tolerance: 1e-10,
            max_iterations: 10_000,
        }
    }
}

/// Rank-`k` factors `M ≈ U·diag(σ)·Vᵀ`.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    /// rows × k, orthonormal columns (zero columns past the numerical rank).
    pub u: Matrix,
    /// Non-increasing.
    pub singular_values: Vec<f64>,
    /// cols × k.
    pub v: Matrix,
    /// Trailing components that were zero-padded because the matrix rank is below `k`.
    pub zero_padded: usize,
}

impl TruncatedSvd {
    /// `U_k·Σ_k^{1/2}`, the symmetric factorization used for node embeddings.
    pub fn embedding(&self) -> Matrix {
        let mut e = self.u.clone();
        let roots: Vec<f64> = self.singular_values.iter().map(|s| s.sqrt()).collect();
        for i in 0..e.rows() {
            e.row_mut(i).iter_mut().zip(&roots).for_each(|(x, r)| *x *= r);
        }
        e
    }

    pub fn reconstruct(&self) -> Matrix {
        let (n, p, k) = (self.u.rows(), self.v.rows(), self.singular_values.len());
        let mut out = Matrix::zeros(n, p);
        for i in 0..n {
            for j in 0..p {
                out[(i, j)] = (0..k)
                    .map(|c| self.u[(i, c)] * self.singular_values[c] * self.v[(j, c)])
                    .sum();
            }
        }
        out
    }
}

/// Top-`k` singular triplets of `m`.
///
/// Eigenpairs of the smaller Gram matrix (`MMᵀ` or `MᵀM`) are extracted one
/// at a time by power iteration; each found pair is deflated and later
/// iterates are re-orthogonalized against it.
pub fn truncated_svd(m: &Matrix, k: usize, opts: SvdOptions) -> Result<TruncatedSvd> {
    let (n, p) = (m.rows(), m.cols());
    if k == 0 || k > n.min(p) {
        return Err(Error::invalid(format!(
            "rank {k} must be in 1..={} for a {n}x{p} matrix",
            n.min(p)
        )));
    }
    if !m.is_finite() {
        return Err(Error::numeric("matrix has non-finite entries"));
    }

    let left = n <= p;
    let gram = if left {
        m.matmul(&m.transpose())?
    } else {
        m.transpose().matmul(m)?
    };
    let g = gram.rows();

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_5bd);
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut vals: Vec<f64> = Vec::with_capacity(k);
    let mut zero_padded = 0;
    let scale = (0..g).map(|i| gram[(i, i)]).sum::<f64>().max(f64::MIN_POSITIVE);
    let negligible = scale * 1e-24;

    for _ in 0..k {
        if zero_padded > 0 {
            vecs.push(vec![0.0; g]);
            vals.push(0.0);
            zero_padded += 1;
            continue;
        }
        let mut x: Vec<f64> = (0..g).map(|_| rng.random::<f64>() - 0.5).collect();
        orthogonalize(&mut x, &vecs);
        let nx = norm2(&x);
        if nx == 0.0 {
            vecs.push(vec![0.0; g]);
            vals.push(0.0);
            zero_padded += 1;
            continue;
        }
        x.iter_mut().for_each(|v| *v /= nx);

        let mut lambda = f64::NAN;
        let mut converged = false;
        for it in 0..opts.max_iterations {
            let mut y = gram.mul_vec(&x)?;
            for (u, l) in vecs.iter().zip(&vals) {
                let c = l * dot(u, &x);
                y.iter_mut().zip(u).for_each(|(yi, ui)| *yi -= c * ui);
            }
            orthogonalize(&mut y, &vecs);
            let next = dot(&x, &y);
            let ny = norm2(&y);
            if ny <= scale * 1e-13 {
                lambda = 0.0;
                converged = true;
                break;
            }
            y.iter_mut().for_each(|v| *v /= ny);
            x = y;
            if it > 2 && (next - lambda).abs() <= opts.tolerance * next.abs().max(negligible) {
                lambda = next;
                converged = true;
                break;
            }
            lambda = next;
        }
        if !converged {
            return Err(Error::numeric(format!(
                "power iteration did not converge within {} iterations",
                opts.max_iterations
            )));
        }
        if lambda <= scale * 1e-20 {
            vecs.push(vec![0.0; g]);
            vals.push(0.0);
            zero_padded += 1;
        } else {
            vecs.push(x);
            vals.push(lambda);
        }
    }
    if zero_padded > 0 {
        log::warn!("truncated_svd: rank below {k}, {zero_padded} trailing dimension(s) zero-padded");
    }

    let sigma: Vec<f64> = vals.iter().map(|l| l.max(0.0).sqrt()).collect();
    // The other side: M v / σ or Mᵀ u / σ.
    let mut other = Vec::with_capacity(k);
    for (vec, s) in vecs.iter().zip(&sigma) {
        if *s == 0.0 {
            other.push(vec![0.0; if left { p } else { n }]);
            continue;
        }
        let w = if left { m.tr_mul_vec(vec)? } else { m.mul_vec(vec)? };
        other.push(w.into_iter().map(|x| x / s).collect());
    }
    let columns_to_matrix = |cols: &[Vec<f64>], len: usize| {
        let mut out = Matrix::zeros(len, cols.len());
        for (c, col) in cols.iter().enumerate() {
            for (r, v) in col.iter().enumerate() {
                out[(r, c)] = *v;
            }
        }
        out
    };
    let (u, v) = if left {
        (columns_to_matrix(&vecs, n), columns_to_matrix(&other, p))
    } else {
        (columns_to_matrix(&other, n), columns_to_matrix(&vecs, p))
    };
    Ok(TruncatedSvd {
        u,
        singular_values: sigma,
        v,
        zero_padded,
    })
}

fn orthogonalize(x: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let c = dot(b, x);
            x.iter_mut().zip(b).for_each(|(xi, bi)| *xi -= c * bi);
        }
    }
}
