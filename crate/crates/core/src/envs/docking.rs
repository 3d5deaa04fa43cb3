//! Clohessy–Wiltshire relative motion, state `(x, y, v_x, v_y)`, thrust
//! `(F_x, F_y) ∈ [−1, 1]²` held constant over one step.
//!
//! The one-step map is linear, `x' = A x + B u`; the coefficients are the
//! closed-form solution of the CW equations under constant thrust, written
//! with `1 − cos(nT) = 2 sin²(nT/2)` so that the `1/(m n²)` terms do not
//! cancel catastrophically.

use serde::{Deserialize, Serialize};

use crate::interval::{rounding_slack, Interval};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DockingParams {
    /// Deputy mass, kg.
    pub m: f64,
    /// Mean motion, rad/s.
    pub n: f64,
    /// Step length, s.
    pub dt: f64,
}

impl Default for DockingParams {
    fn default() -> Self {
        DockingParams {
            m: 12.0,
            n: 0.001027,
            dt: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Docking {
    pub params: DockingParams,
    /// Row-major 4×4 state matrix.
    pub a: [f64; 16],
    /// Row-major 4×2 thrust matrix.
    pub b: [f64; 8],
}

impl Docking {
    pub fn new(params: DockingParams) -> Self {
        let DockingParams { m, n, dt: t } = params;
        let nt = n * t;
        let s = nt.sin();
        let c = nt.cos();
        let h = 2.0 * (0.5 * nt).sin().powi(2); // 1 − cos(nT)
        let q = nt - s; // nT − sin(nT)
        let mn = m * n;
        let mn2 = m * n * n;
        #[rustfmt::skip]
        let a = [
            1.0 + 3.0 * h,       0.0, s / n,            2.0 * h / n,
            -6.0 * q,            1.0, -2.0 * h / n,     (4.0 * s - 3.0 * nt) / n,
            3.0 * n * s,         0.0, c,                2.0 * s,
            -6.0 * n * h,        0.0, -2.0 * s,         1.0 - 4.0 * h,
        ];
        #[rustfmt::skip]
        let b = [
            h / mn2,             2.0 * q / mn2,
            -2.0 * q / mn2,      4.0 * h / mn2 - 1.5 * t * t / m,
            s / mn,              2.0 * h / mn,
            -2.0 * h / mn,       4.0 * s / mn - 3.0 * t / m,
        ];
        Docking { params, a, b }
    }

    /// `u` must already be clamped.
    pub fn step(&self, x: &[f64], u: &[f64]) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (r, o) in out.iter_mut().enumerate() {
            let ax: f64 = (0..4).map(|c| self.a[r * 4 + c] * x[c]).sum();
            let bu: f64 = (0..2).map(|c| self.b[r * 2 + c] * u[c]).sum();
            *o = ax + bu;
        }
        out
    }

    /// Image of a box under the affine map: centre maps to centre, radii map
    /// through `|A|`, `|B|`.
    pub fn step_interval(&self, x: &[Interval], u: &[Interval]) -> [Interval; 4] {
        let mut out = [Interval::ZERO; 4];
        for (r, o) in out.iter_mut().enumerate() {
            let mut center = 0.0;
            let mut radius = 0.0;
            let mut mag = 0.0;
            for c in 0..4 {
                let w = self.a[r * 4 + c];
                center += w * x[c].mid();
                radius += w.abs() * x[c].radius();
                mag += w.abs() * x[c].magnitude();
            }
            for c in 0..2 {
                let w = self.b[r * 2 + c];
                center += w * u[c].mid();
                radius += w.abs() * u[c].radius();
                mag += w.abs() * u[c].magnitude();
            }
            let slack = rounding_slack(8, mag);
            *o = Interval::new(center - radius - slack, center + radius + slack);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Term-by-term transcription of the published update equations, with the
    /// two typographical slips in the v_x' line corrected (`v_x cos(nT)` and a
    /// leading `2F_y/(mn)`), evaluated for T = 1.
    fn transcription(z: &[f64], f: &[f64]) -> [f64; 4] {
        let (x, y, vx, vy) = (z[0], z[1], z[2], z[3]);
        let (fx, fy) = (f[0], f[1]);
        let (m, n, t) = (12.0, 0.001027, 1.0f64);
        let (c, s) = ((n * t).cos(), (n * t).sin());
        let xp = (2.0 * vy / n + 4.0 * x + fx / (m * n * n))
            + (2.0 * fy / (m * n))
            + (-fx / (m * n * n) - 2.0 * vy / n - 3.0 * x) * c
            + (-2.0 * fy / (m * n * n) + vx / n) * s;
        let yp = (-2.0 * vx / n + y + 4.0 * fy / (m * n * n))
            + (-2.0 * fx / (m * n) - 3.0 * vy - 6.0 * n * x) * t
            - 3.0 * fy / (2.0 * m) * t * t
            + (-4.0 * fy / (m * n * n) + 2.0 * vx / n) * c
            + (2.0 * fx / (m * n * n) + 4.0 * vy / n + 6.0 * x) * s;
        let vxp = (2.0 * fy / (m * n))
            + (-2.0 * fy / (m * n) + vx) * c
            + (fx / (m * n) + 2.0 * vy + 3.0 * n * x) * s;
        let vyp = (-2.0 * fx / (m * n) - 3.0 * vy - 6.0 * n * x)
            + (-3.0 * fy / m) * t
            + (2.0 * fx / (m * n) + 4.0 * vy + 6.0 * n * x) * c
            + (4.0 * fy / (m * n) - 2.0 * vx) * s;
        [xp, yp, vxp, vyp]
    }

    /// exp of the 6×6 augmented generator `[[A_c, B_c], [0, 0]]·T` by Taylor
    /// series; the continuous CW generator has norm ~1e-3 so 25 terms are
    /// far past convergence.
    fn expm_oracle(p: DockingParams) -> ([f64; 16], [f64; 8]) {
        let n = p.n;
        let mut g = [[0.0f64; 6]; 6];
        g[0][2] = 1.0;
        g[1][3] = 1.0;
        g[2][0] = 3.0 * n * n;
        g[2][3] = 2.0 * n;
        g[3][2] = -2.0 * n;
        g[2][4] = 1.0 / p.m;
        g[3][5] = 1.0 / p.m;
        for row in g.iter_mut() {
            for v in row.iter_mut() {
                *v *= p.dt;
            }
        }
        let mut term = [[0.0f64; 6]; 6];
        let mut sum = [[0.0f64; 6]; 6];
        for i in 0..6 {
            term[i][i] = 1.0;
            sum[i][i] = 1.0;
        }
        for k in 1..25 {
            let mut next = [[0.0f64; 6]; 6];
            for i in 0..6 {
                for j in 0..6 {
                    next[i][j] = (0..6).map(|l| term[i][l] * g[l][j]).sum::<f64>() / k as f64;
                }
            }
            term = next;
            for i in 0..6 {
                for j in 0..6 {
                    sum[i][j] += term[i][j];
                }
            }
        }
        let mut a = [0.0; 16];
        let mut b = [0.0; 8];
        for i in 0..4 {
            for j in 0..4 {
                a[i * 4 + j] = sum[i][j];
            }
            for j in 0..2 {
                b[i * 2 + j] = sum[i][4 + j];
            }
        }
        (a, b)
    }

    #[test]
    fn zero_is_fixed() {
        let d = Docking::new(DockingParams::default());
        assert_eq!(d.step(&[0.0; 4], &[0.0; 2]), [0.0; 4]);
    }

    #[test]
    fn matches_matrix_exponential() {
        let d = Docking::new(DockingParams::default());
        let (a, b) = expm_oracle(DockingParams::default());
        for i in 0..16 {
            assert!(
                (d.a[i] - a[i]).abs() < 1e-12,
                "A[{i}] {} vs {}",
                d.a[i],
                a[i]
            );
        }
        for i in 0..8 {
            assert!(
                (d.b[i] - b[i]).abs() < 1e-12,
                "B[{i}] {} vs {}",
                d.b[i],
                b[i]
            );
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let z: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let f: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = d.step(&z, &f);
            for r in 0..4 {
                let want: f64 = (0..4).map(|c| a[r * 4 + c] * z[c]).sum::<f64>()
                    + (0..2).map(|c| b[r * 2 + c] * f[c]).sum::<f64>();
                assert!((got[r] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_published_transcription() {
        let d = Docking::new(DockingParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let z: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let f: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = d.step(&z, &f);
            let want = transcription(&z, &f);
            for r in 0..4 {
                assert!(
                    (got[r] - want[r]).abs() < 1e-9,
                    "row {r}: {} vs {}",
                    got[r],
                    want[r]
                );
            }
        }
    }
}
