use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::interval::Interval;

/// Does `offset + 2kπ` fall in `[lo, hi]` for some integer `k`?
fn hits(lo: f64, hi: f64, offset: f64) -> bool {
    let k = ((lo - offset) / TAU).ceil();
    offset + k * TAU <= hi
}

/// Exact ranges of `sin` and `cos` over `[lo, hi]`, from the endpoint values
/// and the interior critical points (odd multiples of π/2 for sin, multiples
/// of π for cos).
pub fn trig_interval(lo: f64, hi: f64) -> (Interval, Interval) {
    debug_assert!(hi >= lo);
    if hi - lo >= TAU {
        return (Interval::new(-1.0, 1.0), Interval::new(-1.0, 1.0));
    }
    let (slo, shi) = (lo.sin(), hi.sin());
    let mut smin = slo.min(shi);
    let mut smax = slo.max(shi);
    if hits(lo, hi, FRAC_PI_2) {
        smax = 1.0;
    }
    if hits(lo, hi, -FRAC_PI_2) {
        smin = -1.0;
    }
    let (clo, chi) = (lo.cos(), hi.cos());
    let mut cmin = clo.min(chi);
    let mut cmax = clo.max(chi);
    if hits(lo, hi, 0.0) {
        cmax = 1.0;
    }
    if hits(lo, hi, PI) {
        cmin = -1.0;
    }
    (Interval::new(smin, smax), Interval::new(cmin, cmax))
}
