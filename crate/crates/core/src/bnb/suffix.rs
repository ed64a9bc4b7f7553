//! Optimal values of a relaxed clustering problem on every suffix of a fixed
//! sample order, solved shortest first so that each solve is bounded by the
//! ones before it.
//!
//! The relaxation drops side constraints, mean boxes, priors and the
//! proportion floor:
//!
//! ```text
//! R(S) = min over labelings of S   Σ_k SS_k + Σ_k c_k log(|S| / c_k)
//! ```
//!
//! with `SS_k` the W-weighted scatter of the samples labelled `k` about their
//! mean and `c_k` their count. Both terms are superadditive over disjoint
//! sample sets and nondecreasing in `S`. A node whose undecided samples
//! contain a suffix `S` therefore costs at least the fixed part's own cost
//! plus `R(S)`.

use std::time::Instant;

use crate::linalg;

/// `Σ_k c_k log(N / c_k)` over the nonzero counts.
pub(crate) fn own_entropy(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64 * (total as f64 / c as f64).ln())
        .sum()
}

struct Search<'a> {
    pts: Vec<&'a [f64]>,
    ywy: Vec<f64>,
    w: &'a [Vec<f64>],
    k: usize,
    /// `r[p]` for the suffixes solved so far.
    r: Vec<f64>,
    count: Vec<usize>,
    sum: Vec<Vec<f64>>,
    sq: Vec<f64>,
    labels: Vec<usize>,
    best: f64,
    best_labels: Vec<usize>,
    nodes: usize,
    budget: usize,
    deadline: Option<Instant>,
    aborted: bool,
}

impl Search<'_> {
    fn scatter(&self, kk: usize) -> f64 {
        let c = self.count[kk];
        if c == 0 {
            return 0.0;
        }
        (self.sq[kk] - linalg::quad_form(self.w, &self.sum[kk]) / c as f64).max(0.0)
    }

    fn cost(&self) -> f64 {
        (0..self.k).map(|kk| self.scatter(kk)).sum::<f64>() + own_entropy(&self.count)
    }

    fn add(&mut self, pos: usize, kk: usize) {
        self.count[kk] += 1;
        for (s, y) in self.sum[kk].iter_mut().zip(self.pts[pos]) {
            *s += y;
        }
        self.sq[kk] += self.ywy[pos];
        self.labels[pos] = kk;
    }

    fn remove(&mut self, pos: usize, kk: usize) {
        self.count[kk] -= 1;
        for (s, y) in self.sum[kk].iter_mut().zip(self.pts[pos]) {
            *s -= y;
        }
        self.sq[kk] -= self.ywy[pos];
    }

    fn out_of_budget(&mut self) -> bool {
        if !self.aborted {
            self.aborted = self.nodes >= self.budget
                || (self.nodes % 4096 == 0 && self.deadline.is_some_and(|d| Instant::now() >= d));
        }
        self.aborted
    }

    /// Labels positions `pos..` of the current suffix. `used` components are
    /// nonempty so far and, by canonical labelling, they are `0..used`.
    fn dfs(&mut self, pos: usize, used: usize) {
        self.nodes += 1;
        if self.out_of_budget() {
            return;
        }
        let end = self.pts.len();
        if pos == end {
            let c = self.cost();
            if c < self.best {
                self.best = c;
                self.best_labels.copy_from_slice(&self.labels);
            }
            return;
        }
        let top = (used + 1).min(self.k);
        let mut tries: Vec<(f64, usize)> = (0..top)
            .map(|kk| {
                self.add(pos, kk);
                let lb = self.cost() + self.r[pos + 1];
                self.remove(pos, kk);
                (lb, kk)
            })
            .collect();
        tries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (lb, kk) in tries {
            if lb >= self.best {
                break;
            }
            self.add(pos, kk);
            self.dfs(pos + 1, used.max(kk + 1));
            self.remove(pos, kk);
            if self.aborted {
                return;
            }
        }
    }
}

/// `R(order[p..])` for every `p`, with `R(∅) = 0` last. Suffixes left unsolved
/// when the node budget or the deadline runs out get the value of the longest
/// solved one, which is still a lower bound.
pub(crate) fn suffix_values(
    points: &[Vec<f64>],
    w: &[Vec<f64>],
    k: usize,
    order: &[usize],
    budget: usize,
    deadline: Option<Instant>,
) -> Vec<f64> {
    let len = order.len();
    let d = w.len();
    let pts: Vec<&[f64]> = order.iter().map(|&i| &points[i][..]).collect();
    let ywy = pts.iter().map(|y| linalg::quad_form(w, y)).collect();
    let mut s = Search {
        pts,
        ywy,
        w,
        k,
        r: vec![0.0; len + 1],
        count: vec![0; k],
        sum: vec![vec![0.0; d]; k],
        sq: vec![0.0; k],
        labels: vec![0; len],
        best: 0.0,
        best_labels: vec![0; len],
        nodes: 0,
        budget,
        deadline,
        aborted: false,
    };
    let mut prev: Vec<usize> = Vec::new();
    for p in (0..len).rev() {
        if !s.aborted {
            // Incumbent: the previous optimum with the new sample in its best place.
            s.best = f64::INFINITY;
            for kk in 0..k {
                for (q, &l) in prev.iter().enumerate() {
                    s.add(p + 1 + q, l);
                }
                s.add(p, kk);
                let c = s.cost();
                if c < s.best {
                    s.best = c;
                    s.best_labels[p..].copy_from_slice(&s.labels[p..]);
                }
                s.remove(p, kk);
                for (q, &l) in prev.iter().enumerate() {
                    s.remove(p + 1 + q, l);
                }
            }
            s.dfs(p, 0);
        }
        s.r[p] = if s.aborted { s.r[p + 1] } else { s.best };
        prev = s.best_labels[p..].to_vec();
    }
    s.r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(points: &[Vec<f64>], w: &[Vec<f64>], k: usize, idx: &[usize]) -> f64 {
        let n = idx.len();
        let mut best = f64::INFINITY;
        for code in 0..k.pow(n as u32) {
            let mut c = code;
            let mut count = vec![0usize; k];
            let mut sum = vec![vec![0.0; w.len()]; k];
            let mut sq = vec![0.0; k];
            for &i in idx {
                let l = c % k;
                c /= k;
                count[l] += 1;
                for (s, y) in sum[l].iter_mut().zip(&points[i]) {
                    *s += y;
                }
                sq[l] += linalg::quad_form(w, &points[i]);
            }
            let ss: f64 = (0..k)
                .filter(|&l| count[l] > 0)
                .map(|l| sq[l] - linalg::quad_form(w, &sum[l]) / count[l] as f64)
                .sum();
            best = best.min(ss + own_entropy(&count));
        }
        best
    }

    #[test]
    fn matches_enumeration_on_every_suffix() {
        let points: Vec<Vec<f64>> =
            [-2.1, 0.3, 1.7, -1.9, 0.1, 2.2, 0.5, -0.4].iter().map(|&v| vec![v]).collect();
        let w = vec![vec![1.5]];
        let order = [5, 0, 2, 3, 7, 1, 6, 4];
        let r = suffix_values(&points, &w, 3, &order, usize::MAX, None);
        assert_eq!(r.len(), 9);
        assert_eq!(r[8], 0.0);
        for p in 0..8 {
            let want = brute(&points, &w, 3, &order[p..]);
            assert!((r[p] - want).abs() < 1e-9, "suffix {p}: {} vs {want}", r[p]);
        }
        assert!(r.windows(2).all(|v| v[0] >= v[1]));
    }

    #[test]
    fn exhausted_budget_keeps_a_lower_bound() {
        let points: Vec<Vec<f64>> = (0..8).map(|i| vec![(i as f64 * 1.3).sin() * 3.0]).collect();
        let w = vec![vec![2.0]];
        let order: Vec<usize> = (0..8).collect();
        let full = suffix_values(&points, &w, 2, &order, usize::MAX, None);
        let cut = suffix_values(&points, &w, 2, &order, 30, None);
        for (a, b) in cut.iter().zip(&full) {
            assert!(a <= &(b + 1e-12));
        }
    }
}
