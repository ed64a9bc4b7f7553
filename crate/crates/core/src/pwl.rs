//! Chordal piecewise-linear overestimate of `−log π` on `[π_min, 1]`.

use crate::error::{contract, Result};
use crate::Real;

/// Affine piece `slope·π + intercept`, the chord of `−log` over `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chord<T: Real = f64> {
    pub slope: T,
    pub intercept: T,
    pub lo: T,
    pub hi: T,
}

impl<T: Real> Chord<T> {
    pub fn eval(&self, pi: T) -> T {
        self.slope * pi + self.intercept
    }

    /// Largest gap between the chord and `−log` inside its cell. The maximiser
    /// solves `−1/π = slope`, i.e. `π* = (hi − lo) / ln(hi/lo)`.
    pub fn max_error(&self) -> T {
        let ratio = (self.hi / self.lo).ln();
        if !(ratio > T::zero()) {
            return T::zero();
        }
        let star = ((self.hi - self.lo) / ratio).max(self.lo).min(self.hi);
        (self.eval(star) + star.ln()).max(T::zero())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PwlApprox<T: Real = f64> {
    pub pi_min: T,
    pub chords: Vec<Chord<T>>,
    /// `max_π (max_j chord_j(π) + log π)` over `[π_min, 1]`.
    pub e_max: T,
}

impl<T: Real> PwlApprox<T> {
    /// Pointwise maximum of the chords (equal to the interpolant on the grid
    /// since `−log` is convex).
    pub fn eval(&self, pi: T) -> T {
        self.chords.iter().map(|c| c.eval(pi)).fold(T::neg_infinity(), T::max)
    }

    pub fn breakpoints(&self) -> Vec<T> {
        let mut g: Vec<T> = self.chords.iter().map(|c| c.lo).collect();
        if let Some(last) = self.chords.last() {
            g.push(last.hi);
        }
        g
    }
}

/// `B` chords of `−log π` over the regular grid `π_min = g_0 < … < g_B = 1`.
pub fn pwl_chords<T: Real>(pi_min: T, b: usize) -> Result<PwlApprox<T>> {
    if b == 0 {
        return Err(contract("need at least one breakpoint interval"));
    }
    if !(pi_min > T::zero() && pi_min < T::one()) {
        return Err(contract(format!("π floor must lie in (0, 1), got {pi_min}")));
    }
    let step = (T::one() - pi_min) / T::from_count(b);
    let grid: Vec<T> = (0..=b)
        .map(|j| if j == b { T::one() } else { pi_min + step * T::from_count(j) })
        .collect();
    let chords: Vec<Chord<T>> = grid
        .windows(2)
        .map(|w| {
            let (lo, hi) = (w[0], w[1]);
            let slope = (lo.ln() - hi.ln()) / (hi - lo);
            let intercept = -lo.ln() - slope * lo;
            Chord { slope, intercept, lo, hi }
        })
        .collect();
    let e_max = chords.iter().map(Chord::max_error).fold(T::zero(), T::max);
    Ok(PwlApprox { pi_min, chords, e_max })
}

/// Cap `Δ²/(8π_min²)` on the chord error for grid spacing `Δ = (1−π_min)/B`.
pub fn analytic_error_cap<T: Real>(pi_min: T, b: usize) -> T {
    let delta = (T::one() - pi_min) / T::from_count(b);
    delta * delta / (T::lit(8.0) * pi_min * pi_min)
}

/// Lower bound on the true optimum from a bound on the chordal model: the
/// model overestimates each sample's `−log π` term by at most `e_max`.
pub fn true_bound_correction<T: Real>(glbd: T, n: usize, e_max: T) -> T {
    glbd - T::from_count(n) * e_max
}
