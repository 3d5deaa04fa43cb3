//! Closed real intervals and axis-aligned boxes.
//!
//! Every operation that produces an enclosure is required to contain the
//! image of every point it abstracts. Floating-point rounding is absorbed by
//! the callers (layer propagation, dynamics images) through [`Interval::widen`]
//! with a magnitude-proportional slack, so enclosures stay sound after
//! round-to-nearest arithmetic.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ClbfError, Result};

/// Relative slack used to absorb round-to-nearest error in a dot product of
/// length `n`: `(n + 2)·u` with `u` the unit roundoff, doubled.
pub(crate) fn rounding_slack(n: usize, magnitude: f64) -> f64 {
    2.0 * (n as f64 + 2.0) * f64::EPSILON * magnitude + f64::MIN_POSITIVE
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const ZERO: Interval = Interval { lo: 0.0, hi: 0.0 };
    pub const UNIT: Interval = Interval { lo: 0.0, hi: 1.0 };

    #[inline]
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "interval [{lo}, {hi}] is empty");
        Interval { lo, hi }
    }

    #[inline]
    pub fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    #[inline]
    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    #[inline]
    pub fn radius(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    #[inline]
    pub fn magnitude(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    #[inline]
    pub fn hull(&self, other: &Interval) -> Interval {
        Interval::new(self.lo.min(other.lo), self.hi.max(other.hi))
    }

    #[inline]
    pub fn intersects(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    #[inline]
    pub fn add(&self, other: &Interval) -> Interval {
        Interval::new(self.lo + other.lo, self.hi + other.hi)
    }

    #[inline]
    pub fn sub(&self, other: &Interval) -> Interval {
        Interval::new(self.lo - other.hi, self.hi - other.lo)
    }

    #[inline]
    pub fn scale(&self, k: f64) -> Interval {
        if k >= 0.0 {
            Interval::new(k * self.lo, k * self.hi)
        } else {
            Interval::new(k * self.hi, k * self.lo)
        }
    }

    #[inline]
    pub fn mul(&self, other: &Interval) -> Interval {
        let a = self.lo * other.lo;
        let b = self.lo * other.hi;
        let c = self.hi * other.lo;
        let d = self.hi * other.hi;
        Interval::new(a.min(b).min(c).min(d), a.max(b).max(c).max(d))
    }

    #[inline]
    pub fn relu(&self) -> Interval {
        Interval::new(self.lo.max(0.0), self.hi.max(0.0))
    }

    #[inline]
    pub fn clamp(&self, lo: f64, hi: f64) -> Interval {
        Interval::new(self.lo.clamp(lo, hi), self.hi.clamp(lo, hi))
    }

    /// Widen both ends outward by `eps`.
    #[inline]
    pub fn widen(&self, eps: f64) -> Interval {
        Interval::new(self.lo - eps, self.hi + eps)
    }
}

/// Axis-aligned closed box `[lo_1, hi_1] × … × [lo_n, hi_n]`.
///
/// Bounds may be infinite (used for unbounded velocity coordinates of a goal
/// set); boxes that are split or sampled must be finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl IntervalBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        ClbfError::check_dim(lo.len(), hi.len())?;
        if lo.is_empty() {
            return Err(ClbfError::invalid("box must have at least one dimension"));
        }
        for (i, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if l.is_nan() || h.is_nan() || l > h {
                return Err(ClbfError::invalid(format!(
                    "box dimension {i}: lower bound {l} exceeds upper bound {h}"
                )));
            }
        }
        Ok(IntervalBox { lo, hi })
    }

    /// Panicking constructor for literals known to be well formed.
    pub fn from_bounds(bounds: &[(f64, f64)]) -> Self {
        let (lo, hi) = bounds.iter().copied().unzip();
        IntervalBox::new(lo, hi).expect("malformed box literal")
    }

    pub fn point(x: &[f64]) -> Self {
        IntervalBox {
            lo: x.to_vec(),
            hi: x.to_vec(),
        }
    }

    pub fn from_intervals(ivs: &[Interval]) -> Self {
        IntervalBox {
            lo: ivs.iter().map(|i| i.lo).collect(),
            hi: ivs.iter().map(|i| i.hi).collect(),
        }
    }

    /// Box of half-width `radius` around `center` (the l∞ ball).
    pub fn ball_inf(center: &[f64], radius: f64) -> Self {
        IntervalBox {
            lo: center.iter().map(|c| c - radius).collect(),
            hi: center.iter().map(|c| c + radius).collect(),
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    #[inline]
    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    #[inline]
    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    #[inline]
    pub fn interval(&self, i: usize) -> Interval {
        Interval {
            lo: self.lo[i],
            hi: self.hi[i],
        }
    }

    pub fn intervals(&self) -> Vec<Interval> {
        (0..self.dim()).map(|i| self.interval(i)).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    pub fn radii(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (h - l))
            .collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).collect()
    }

    pub fn max_width(&self) -> f64 {
        self.widths().into_iter().fold(0.0, f64::max)
    }

    pub fn volume(&self) -> f64 {
        self.widths().into_iter().product()
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    pub fn intersects(&self, other: &IntervalBox) -> bool {
        (0..self.dim()).all(|i| self.lo[i] <= other.hi[i] && other.lo[i] <= self.hi[i])
    }

    /// `self ⊆ other`.
    pub fn is_subset_of(&self, other: &IntervalBox) -> bool {
        (0..self.dim()).all(|i| other.lo[i] <= self.lo[i] && self.hi[i] <= other.hi[i])
    }

    pub fn intersection(&self, other: &IntervalBox) -> Option<IntervalBox> {
        if !self.intersects(other) {
            return None;
        }
        Some(IntervalBox {
            lo: (0..self.dim())
                .map(|i| self.lo[i].max(other.lo[i]))
                .collect(),
            hi: (0..self.dim())
                .map(|i| self.hi[i].min(other.hi[i]))
                .collect(),
        })
    }

    /// Grow every side by `delta`.
    pub fn inflate(&self, delta: f64) -> IntervalBox {
        IntervalBox {
            lo: self.lo.iter().map(|l| l - delta).collect(),
            hi: self.hi.iter().map(|h| h + delta).collect(),
        }
    }

    /// Closest point of the box to `x` (coordinate-wise clamp).
    pub fn project(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lo[i], self.hi[i]);
        }
    }

    pub fn widest_dim(&self) -> usize {
        let mut best = 0;
        let mut best_w = f64::NEG_INFINITY;
        for i in 0..self.dim() {
            let w = self.hi[i] - self.lo[i];
            if w > best_w {
                best_w = w;
                best = i;
            }
        }
        best
    }

    /// Bisect along dimension `dim`; the two halves share the midpoint face.
    pub fn bisect(&self, dim: usize) -> (IntervalBox, IntervalBox) {
        let mid = 0.5 * (self.lo[dim] + self.hi[dim]);
        let mut left = self.clone();
        let mut right = self.clone();
        left.hi[dim] = mid;
        right.lo[dim] = mid;
        (left, right)
    }

    /// Uniform sample; requires finite bounds.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| if l == h { *l } else { rng.gen_range(*l..=*h) })
            .collect()
    }

    pub fn corners(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| {
                (0..n)
                    .map(|i| {
                        if mask >> i & 1 == 1 {
                            self.hi[i]
                        } else {
                            self.lo[i]
                        }
                    })
                    .collect()
            })
            .collect()
    }
}
