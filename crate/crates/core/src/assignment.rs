//! Minimum-cost rectangular assignment (shortest augmenting paths with
//! dual potentials, Jonker-Volgenant style).

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Assigns every row of `cost` (n × m, n ≤ m) to a distinct column,
/// minimizing the total cost. Returns the column of each row.
pub fn solve(cost: &Matrix) -> Result<Vec<usize>> {
    let (n, m) = (cost.rows(), cost.cols());
    if n > m {
        return Err(Error::invalid(format!("cannot assign {n} rows to {m} columns")));
    }
    if !cost.is_finite() {
        return Err(Error::numeric("assignment cost has non-finite entries"));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    // 1-based internally; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if row_of[j] != 0 {
            out[row_of[j] - 1] = j - 1;
        }
    }
    Ok(out)
}

/// Total cost of an assignment returned by [`solve`].
pub fn total_cost(cost: &Matrix, assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum()
}
