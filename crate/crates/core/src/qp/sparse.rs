//! Compressed sparse column storage.

#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub colptr: Vec<usize>,
    pub rowidx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    /// Build from `(row, col, value)` triplets, summing duplicates and
    /// sorting row indices within each column. Explicit zeros are kept.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; ncols + 1];
        for &(_, c, _) in triplets {
            counts[c + 1] += 1;
        }
        for j in 0..ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut rows = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            debug_assert!(r < nrows && c < ncols);
            rows[next[c]] = r;
            vals[next[c]] = v;
            next[c] += 1;
        }
        let mut colptr = vec![0usize; ncols + 1];
        let mut rowidx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut order: Vec<usize> = Vec::new();
        for j in 0..ncols {
            order.clear();
            order.extend(counts[j]..counts[j + 1]);
            order.sort_by_key(|&p| rows[p]);
            for &p in &order {
                if rowidx.len() > colptr[j] && *rowidx.last().unwrap() == rows[p] {
                    *values.last_mut().unwrap() += vals[p];
                } else {
                    rowidx.push(rows[p]);
                    values.push(vals[p]);
                }
            }
            colptr[j + 1] = rowidx.len();
        }
        Self { nrows, ncols, colptr, rowidx, values }
    }

    pub fn nnz(&self) -> usize {
        self.rowidx.len()
    }

    pub fn col(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.colptr[j]..self.colptr[j + 1]).map(move |p| (self.rowidx[p], self.values[p]))
    }

    /// `y += A x`.
    pub fn mul_add(&self, x: &[f64], y: &mut [f64]) {
        for j in 0..self.ncols {
            let xj = x[j];
            if xj != 0.0 {
                for p in self.colptr[j]..self.colptr[j + 1] {
                    y[self.rowidx[p]] += self.values[p] * xj;
                }
            }
        }
    }

    /// `y += Aᵀ x`.
    pub fn tmul_add(&self, x: &[f64], y: &mut [f64]) {
        for (j, yj) in y.iter_mut().enumerate().take(self.ncols) {
            let mut s = 0.0;
            for p in self.colptr[j]..self.colptr[j + 1] {
                s += self.values[p] * x[self.rowidx[p]];
            }
            *yj += s;
        }
    }

    /// `y += S x` where `self` stores the upper triangle of symmetric `S`.
    pub fn sym_upper_mul_add(&self, x: &[f64], y: &mut [f64]) {
        for j in 0..self.ncols {
            for p in self.colptr[j]..self.colptr[j + 1] {
                let (i, v) = (self.rowidx[p], self.values[p]);
                y[i] += v * x[j];
                if i != j {
                    y[j] += v * x[i];
                }
            }
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Vec::with_capacity(self.nnz());
        for j in 0..self.ncols {
            for (i, v) in self.col(j) {
                t.push((j, i, v));
            }
        }
        Self::from_triplets(self.ncols, self.nrows, &t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates_and_multiply() {
        let a = CscMatrix::from_triplets(2, 3, &[(0, 0, 1.0), (1, 2, 2.0), (0, 0, 3.0), (1, 0, -1.0)]);
        assert_eq!(a.nnz(), 3);
        let mut y = vec![0.0; 2];
        a.mul_add(&[1.0, 5.0, 2.0], &mut y);
        assert_eq!(y, vec![4.0, 3.0]);
        let mut z = vec![0.0; 3];
        a.tmul_add(&[1.0, 1.0], &mut z);
        assert_eq!(z, vec![3.0, 0.0, 2.0]);
        assert_eq!(a.transpose().transpose(), a);
    }

    #[test]
    fn symmetric_upper_product() {
        let s = CscMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 1, 3.0)]);
        let mut y = vec![0.0; 2];
        s.sym_upper_mul_add(&[1.0, 2.0], &mut y);
        assert_eq!(y, vec![4.0, 7.0]);
    }
}
