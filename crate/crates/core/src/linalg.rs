//! Small dense helpers on `Vec<Vec<T>>` matrices (d×d and K×K sized).

use crate::error::{Error, Result};
use crate::Real;

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
///
/// Fails with [`Error::NotPsd`] naming the first leading minor whose pivot is
/// not strictly positive.
pub fn cholesky<T: Real>(a: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
    let d = a.len();
    let mut l = vec![vec![T::zero(); d]; d];
    for j in 0..d {
        let mut diag = a[j][j];
        for p in 0..j {
            diag = diag - l[j][p] * l[j][p];
        }
        if !(diag > T::zero()) {
            return Err(Error::NotPsd { minor: j + 1 });
        }
        let ljj = diag.sqrt();
        l[j][j] = ljj;
        for i in (j + 1)..d {
            let mut s = a[i][j];
            for p in 0..j {
                s = s - l[i][p] * l[j][p];
            }
            l[i][j] = s / ljj;
        }
    }
    Ok(l)
}

pub fn mat_vec<T: Real>(a: &[Vec<T>], x: &[T]) -> Vec<T> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(&r, &v)| r * v).sum())
        .collect()
}

/// `xᵀ A x`.
pub fn quad_form<T: Real>(a: &[Vec<T>], x: &[T]) -> T {
    let mut acc = T::zero();
    for (i, row) in a.iter().enumerate() {
        let mut s = T::zero();
        for (j, &v) in row.iter().enumerate() {
            s = s + v * x[j];
        }
        acc = acc + x[i] * s;
    }
    acc
}

pub fn is_diagonal<T: Real>(a: &[Vec<T>]) -> bool {
    a.iter()
        .enumerate()
        .all(|(i, row)| row.iter().enumerate().all(|(j, &v)| i == j || v == T::zero()))
}

pub fn is_symmetric<T: Real>(a: &[Vec<T>], tol: T) -> bool {
    let d = a.len();
    a.iter().all(|r| r.len() == d)
        && (0..d).all(|i| {
            (0..i).all(|j| (a[i][j] - a[j][i]).abs() <= tol * (T::one() + a[i][j].abs()))
        })
}

/// Minimise `½ xᵀ H x − gᵀ x` over the box `[lo, hi]` by cyclic coordinate
/// descent, starting from `x0`. `H` must be symmetric PSD; coordinates with a
/// non-positive diagonal are left where they are.
pub fn box_qp<T: Real>(h: &[Vec<T>], g: &[T], lo: &[T], hi: &[T], x0: &[T]) -> Vec<T> {
    let d = g.len();
    let mut x: Vec<T> = (0..d).map(|j| x0[j].max(lo[j]).min(hi[j])).collect();
    let tol = T::epsilon() * T::lit(16.0);
    for _sweep in 0..10_000 {
        let mut moved = T::zero();
        for j in 0..d {
            let hjj = h[j][j];
            if !(hjj > T::zero()) {
                continue;
            }
            let mut r = g[j];
            for (l, &xl) in x.iter().enumerate() {
                if l != j {
                    r = r - h[j][l] * xl;
                }
            }
            let next = (r / hjj).max(lo[j]).min(hi[j]);
            moved = moved.max((next - x[j]).abs() / (T::one() + x[j].abs()));
            x[j] = next;
        }
        if moved <= tol {
            break;
        }
    }
    x
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method,
/// O(K³)). Returns `col_for_row`.
pub fn min_cost_matching<T: Real>(cost: &[Vec<T>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based potentials formulation.
    let inf = T::infinity();
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] = u[p[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_for_row = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            col_for_row[p[j] - 1] = j - 1;
        }
    }
    col_for_row
}
