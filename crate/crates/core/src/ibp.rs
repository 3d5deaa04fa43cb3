//! Interval bound propagation through dense ReLU networks.
//!
//! Besides output enclosures this computes interval enclosures of the
//! network Jacobian over a box (forward mode, with the ReLU derivative taken
//! as `[0, 1]` for neurons whose pre-activation straddles zero). Those feed
//! the centred (mean-value) bounds used by the verifier.

use crate::interval::{rounding_slack, Interval};
use crate::nn::Mlp;

/// Per-layer pre-activation enclosures from one IBP pass.
#[derive(Debug, Clone)]
pub struct IbpTrace {
    pub preacts: Vec<Vec<Interval>>,
}

impl IbpTrace {
    pub fn output(&self) -> &[Interval] {
        self.preacts.last().expect("network has layers")
    }
}

fn affine_interval(layer: &crate::nn::Layer, x: &[Interval], out: &mut Vec<Interval>) {
    out.clear();
    let mids: Vec<f64> = x.iter().map(Interval::mid).collect();
    let rads: Vec<f64> = x.iter().map(Interval::radius).collect();
    let mags: Vec<f64> = x.iter().map(Interval::magnitude).collect();
    for r in 0..layer.rows {
        let row = layer.row(r);
        let mut c = layer.bias[r];
        let mut rad = 0.0;
        let mut mag = layer.bias[r].abs();
        for j in 0..layer.cols {
            let w = row[j];
            c += w * mids[j];
            rad += w.abs() * rads[j];
            mag += w.abs() * mags[j];
        }
        let slack = rounding_slack(layer.cols + 2, mag);
        out.push(Interval::new(c - rad - slack, c + rad + slack));
    }
}

/// Output enclosure of `net` over the box `x`, keeping pre-activations.
pub fn ibp_trace(net: &Mlp, x: &[Interval]) -> IbpTrace {
    let n = net.layers().len();
    let mut preacts = Vec::with_capacity(n);
    let mut cur: Vec<Interval> = x.to_vec();
    for (k, layer) in net.layers().iter().enumerate() {
        let mut pre = Vec::with_capacity(layer.rows);
        affine_interval(layer, &cur, &mut pre);
        if k + 1 < n {
            cur = pre.iter().map(Interval::relu).collect();
        }
        preacts.push(pre);
    }
    IbpTrace { preacts }
}

pub fn ibp(net: &Mlp, x: &[Interval]) -> Vec<Interval> {
    ibp_trace(net, x).preacts.pop().expect("network has layers")
}

/// ReLU derivative enclosure for a pre-activation interval.
#[inline]
pub fn relu_derivative(z: &Interval) -> Interval {
    if z.lo >= 0.0 {
        Interval::point(1.0)
    } else if z.hi <= 0.0 {
        Interval::ZERO
    } else {
        Interval::UNIT
    }
}

/// Derivative enclosure of `clamp(·, lo, hi)` over `z`.
#[inline]
pub fn clamp_derivative(z: &Interval, lo: f64, hi: f64) -> Interval {
    if z.lo >= lo && z.hi <= hi {
        Interval::point(1.0)
    } else if z.hi <= lo || z.lo >= hi {
        Interval::ZERO
    } else {
        Interval::UNIT
    }
}

/// Interval Jacobian (`out_dim × in_dim`, row-major) of `net` over the box
/// described by `trace` (which must come from [`ibp_trace`] on that box).
pub fn interval_jacobian(net: &Mlp, trace: &IbpTrace) -> Vec<Interval> {
    let n_in = net.input_dim();
    let n = net.layers().len();
    // one column per input, in midpoint-radius form
    let mut mids: Vec<Vec<f64>> = (0..n_in)
        .map(|c| (0..n_in).map(|j| if j == c { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut rads: Vec<Vec<f64>> = vec![vec![0.0; n_in]; n_in];
    let mut absw: Vec<f64> = Vec::new();
    for (k, layer) in net.layers().iter().enumerate() {
        absw.clear();
        absw.extend(layer.weights.iter().map(|w| w.abs()));
        let last = k + 1 == n;
        for c in 0..n_in {
            let (m, rd) = (&mids[c], &rads[c]);
            let mag_in: Vec<f64> = m.iter().zip(rd).map(|(a, b)| a.abs() + b).collect();
            let mut nm = Vec::with_capacity(layer.rows);
            let mut nr = Vec::with_capacity(layer.rows);
            for r in 0..layer.rows {
                let row = layer.row(r);
                let arow = &absw[r * layer.cols..(r + 1) * layer.cols];
                let mid: f64 = row.iter().zip(m).map(|(w, v)| w * v).sum();
                let (mut rad, mag) = arow
                    .iter()
                    .zip(rd.iter().zip(&mag_in))
                    .fold((0.0, 0.0), |(r, g), (a, (x, y))| (r + a * x, g + a * y));
                let mut mid = mid;
                rad += rounding_slack(layer.cols + 2, mag);
                if !last {
                    let d = relu_derivative(&trace.preacts[k][r]);
                    if d.hi == 0.0 {
                        mid = 0.0;
                        rad = 0.0;
                    } else if d.lo != 1.0 {
                        // hull with zero
                        let lo = (mid - rad).min(0.0);
                        let hi = (mid + rad).max(0.0);
                        mid = 0.5 * (lo + hi);
                        rad = 0.5 * (hi - lo) + (hi - lo) * f64::EPSILON;
                    }
                }
                nm.push(mid);
                nr.push(rad);
            }
            mids[c] = nm;
            rads[c] = nr;
        }
    }
    let rows = net.output_dim();
    let mut jac = Vec::with_capacity(rows * n_in);
    for r in 0..rows {
        for c in 0..n_in {
            let (m, rd) = (mids[c][r], rads[c][r]);
            // midpoint-radius to endpoints, padded for the conversion
            let pad = (m.abs() + rd) * 2.0 * f64::EPSILON;
            jac.push(Interval::new(m - rd - pad, m + rd + pad));
        }
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval::IntervalBox;
    use crate::nn::{value_and_input_grad, Activation, Layer, Mlp};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_interval_example() {
        let net = Mlp::new(
            vec![
                Layer::new(1, 2, vec![1.0, -1.0], vec![0.0]).unwrap(),
                Layer::new(1, 1, vec![1.0], vec![0.0]).unwrap(),
            ],
            vec![Activation::Relu],
        )
        .unwrap();
        let tr = ibp_trace(&net, &[Interval::new(0.0, 1.0), Interval::new(0.0, 1.0)]);
        let pre = tr.preacts[0][0];
        assert!((pre.lo + 1.0).abs() < 1e-12 && (pre.hi - 1.0).abs() < 1e-12);
        let out = tr.output()[0];
        assert!(out.lo.abs() < 1e-12 && (out.hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sound_by_sampling_with_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let mut net = Mlp::glorot(&[3, 24, 12, 2], &mut rng).unwrap();
            for l in net.layers_mut() {
                l.bias
                    .iter_mut()
                    .for_each(|b| *b = rng.gen_range(-0.5..0.5));
            }
            let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r: f64 = rng.gen_range(0.001..0.3);
            let b = IntervalBox::ball_inf(&c, r);
            let tr = ibp_trace(&net, &b.intervals());
            let jac = interval_jacobian(&net, &tr);
            for _ in 0..300 {
                let x = b.sample(&mut rng);
                let y = net.eval(&x);
                for (o, iv) in y.iter().zip(tr.output()) {
                    assert!(iv.contains(*o));
                }
                // gradient of output 0 lies in row 0 of the interval Jacobian
                let single = Mlp::new(
                    {
                        let mut ls = net.layers().to_vec();
                        let last = ls.pop().unwrap();
                        ls.push(
                            Layer::new(1, last.cols, last.row(0).to_vec(), vec![last.bias[0]])
                                .unwrap(),
                        );
                        ls
                    },
                    net.activations().to_vec(),
                )
                .unwrap();
                let (_, g) = value_and_input_grad(&single, &x);
                for j in 0..3 {
                    assert!(jac[j].contains(g[j]));
                }
            }
        }
    }
}
