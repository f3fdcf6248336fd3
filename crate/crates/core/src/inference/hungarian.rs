//! Minimum-cost assignment (Kuhn-Munkres with potentials, O(n^3)).

use crate::error::{Error, Result};

/// Optimal assignment for a square row-major `n x n` cost matrix:
/// `result[row] = col`.
pub fn hungarian(cost: &[f64], n: usize) -> Result<Vec<usize>> {
    if cost.len() != n * n {
        return Err(Error::Shape(format!("cost has {} entries, expected {n}x{n}", cost.len())));
    }
    if cost.iter().any(|c| c.is_nan()) {
        return Err(Error::NanCost);
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("cost matrix".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    // 1-based arrays; column 0 is a virtual start.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        out[owner[j] - 1] = j - 1;
    }
    Ok(out)
}

/// Rectangular `rows x cols` problem with `rows <= cols`; rows are padded
/// with constant (zero) cost, which leaves the optimum of the real rows intact.
pub fn assign_rows(cost: &[f64], rows: usize, cols: usize) -> Result<Vec<usize>> {
    if rows > cols {
        return Err(Error::Shape(format!("{rows} rows cannot be assigned to {cols} columns")));
    }
    if cost.len() != rows * cols {
        return Err(Error::Shape(format!("cost has {} entries, expected {rows}x{cols}", cost.len())));
    }
    let mut square = vec![0.0; cols * cols];
    square[..rows * cols].copy_from_slice(cost);
    let mut a = hungarian(&square, cols)?;
    a.truncate(rows);
    Ok(a)
}

/// Sum of `cost[row][assignment[row]]`.
pub fn assignment_cost(cost: &[f64], n_cols: usize, assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(r, &c)| cost[r * n_cols + c]).sum()
}
