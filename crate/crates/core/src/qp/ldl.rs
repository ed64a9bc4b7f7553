//! LDLᵀ factorisation of sparse quasi-definite matrices (elimination-tree
//! up-looking algorithm) behind an approximate-minimum-degree ordering.

use super::sparse::CscMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZeroPivot(pub usize);

const NONE: usize = usize::MAX;

/// Factor of `P S Pᵀ` for a symmetric `S` given by its upper triangle.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    perm: Vec<usize>,
    /// Permuted upper triangle (pattern fixed after construction).
    ap: Vec<usize>,
    ai: Vec<usize>,
    ax: Vec<f64>,
    /// Position in `ax` of each entry of the original matrix.
    map: Vec<usize>,
    etree: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
    work: Vec<f64>,
}

impl LdlFactor {
    /// Order, analyse and factor. Every diagonal entry must be present in the
    /// pattern (explicit zeros are fine).
    pub fn new(upper: &CscMatrix) -> Result<Self, ZeroPivot> {
        let n = upper.ncols;
        let perm = match amd::order(n, &upper.colptr, &upper.rowidx, &amd::Control::default()) {
            Ok((p, _, _)) => p,
            Err(_) => (0..n).collect(),
        };
        let mut pinv = vec![0usize; n];
        for (k, &p) in perm.iter().enumerate() {
            pinv[p] = k;
        }
        // Permute the upper triangle, remembering where each entry lands.
        let mut counts = vec![0usize; n + 1];
        for j in 0..n {
            for p in upper.colptr[j]..upper.colptr[j + 1] {
                let (a, b) = (pinv[upper.rowidx[p]], pinv[j]);
                counts[a.max(b) + 1] += 1;
            }
        }
        for j in 0..n {
            counts[j + 1] += counts[j];
        }
        let nnz = upper.nnz();
        let mut next = counts.clone();
        let mut ai = vec![0usize; nnz];
        let mut src = vec![0usize; nnz];
        for j in 0..n {
            for p in upper.colptr[j]..upper.colptr[j + 1] {
                let (a, b) = (pinv[upper.rowidx[p]], pinv[j]);
                let col = a.max(b);
                ai[next[col]] = a.min(b);
                src[next[col]] = p;
                next[col] += 1;
            }
        }
        let mut map = vec![0usize; nnz];
        let mut sorted_ai = vec![0usize; nnz];
        let mut order: Vec<usize> = Vec::new();
        for j in 0..n {
            order.clear();
            order.extend(counts[j]..counts[j + 1]);
            order.sort_by_key(|&q| ai[q]);
            for (off, &q) in order.iter().enumerate() {
                let pos = counts[j] + off;
                sorted_ai[pos] = ai[q];
                map[src[q]] = pos;
            }
        }
        let ap = counts;
        let ai = sorted_ai;

        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut mark = vec![NONE; n];
        for j in 0..n {
            mark[j] = j;
            for &row in &ai[ap[j]..ap[j + 1]] {
                let mut i = row;
                while mark[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    mark[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        let total = lp[n];
        let mut f = Self {
            n,
            perm,
            ap,
            ai,
            ax: vec![0.0; nnz],
            map,
            etree,
            lp,
            li: vec![0; total],
            lx: vec![0.0; total],
            d: vec![0.0; n],
            dinv: vec![0.0; n],
            work: vec![0.0; n],
        };
        f.refactor(&upper.values)?;
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Numeric refactorisation for new values on the same pattern (values in
    /// the original matrix's storage order).
    pub fn refactor(&mut self, values: &[f64]) -> Result<(), ZeroPivot> {
        for (p, &v) in values.iter().enumerate() {
            self.ax[self.map[p]] = v;
        }
        let n = self.n;
        let mut y_used = vec![false; n];
        let mut y_vals = vec![0.0; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut next_space: Vec<usize> = self.lp[..n].to_vec();
        for k in 0..n {
            self.d[k] = 0.0;
            let mut nnz_y = 0;
            for p in self.ap[k]..self.ap[k + 1] {
                let b = self.ai[p];
                if b == k {
                    self.d[k] = self.ax[p];
                    continue;
                }
                y_vals[b] = self.ax[p];
                if !y_used[b] {
                    y_used[b] = true;
                    elim[0] = b;
                    let mut ne = 1;
                    let mut nx = self.etree[b];
                    while nx != NONE && nx < k {
                        if y_used[nx] {
                            break;
                        }
                        y_used[nx] = true;
                        elim[ne] = nx;
                        ne += 1;
                        nx = self.etree[nx];
                    }
                    while ne > 0 {
                        ne -= 1;
                        y_idx[nnz_y] = elim[ne];
                        nnz_y += 1;
                    }
                }
            }
            for idx in (0..nnz_y).rev() {
                let c = y_idx[idx];
                let end = next_space[c];
                let yc = y_vals[c];
                for q in self.lp[c]..end {
                    y_vals[self.li[q]] -= self.lx[q] * yc;
                }
                self.li[end] = k;
                let l = yc * self.dinv[c];
                self.lx[end] = l;
                self.d[k] -= yc * l;
                next_space[c] += 1;
                y_vals[c] = 0.0;
                y_used[c] = false;
            }
            if self.d[k] == 0.0 || !self.d[k].is_finite() {
                return Err(ZeroPivot(self.perm[k]));
            }
            self.dinv[k] = 1.0 / self.d[k];
        }
        debug_assert!(next_space.iter().zip(&self.lp[1..]).all(|(a, b)| a == b));
        Ok(())
    }

    /// Solve `S x = b` in place.
    pub fn solve(&mut self, b: &mut [f64]) {
        let n = self.n;
        let x = &mut self.work;
        for k in 0..n {
            x[k] = b[self.perm[k]];
        }
        for i in 0..n {
            let xi = x[i];
            for q in self.lp[i]..self.lp[i + 1] {
                x[self.li[q]] -= self.lx[q] * xi;
            }
        }
        for i in 0..n {
            x[i] *= self.dinv[i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for q in self.lp[i]..self.lp[i + 1] {
                s -= self.lx[q] * x[self.li[q]];
            }
            x[i] = s;
        }
        for k in 0..n {
            b[self.perm[k]] = x[k];
        }
    }

    /// Number of positive and negative pivots.
    pub fn inertia(&self) -> (usize, usize) {
        let pos = self.d.iter().filter(|&&v| v > 0.0).count();
        (pos, self.n - pos)
    }
}
