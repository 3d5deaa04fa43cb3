//! Global Lipschitz bounds under l₂ and l∞, and the robust descent margin
//! they imply.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ClbfError, Result};
use crate::nn::{lipschitz_upper_bound_l2, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    #[serde(rename = "2")]
    L2,
    #[serde(rename = "inf")]
    LInf,
}

impl NormKind {
    /// Accepts `p = 2` and `p = ∞`.
    pub fn from_p(p: f64) -> Result<Self> {
        if p == 2.0 {
            Ok(NormKind::L2)
        } else if p == f64::INFINITY {
            Ok(NormKind::LInf)
        } else {
            Err(ClbfError::invalid(format!(
                "unsupported norm p = {p} (supported: 2, inf)"
            )))
        }
    }

    /// `1/p`.
    fn inv_p(self) -> f64 {
        match self {
            NormKind::L2 => 0.5,
            NormKind::LInf => 0.0,
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormKind::L2 => "2",
            NormKind::LInf => "inf",
        })
    }
}

impl FromStr for NormKind {
    type Err = ClbfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "2" | "l2" => Ok(NormKind::L2),
            "inf" | "linf" | "∞" => Ok(NormKind::LInf),
            other => other
                .parse::<f64>()
                .map_err(|_| ClbfError::invalid(format!("unsupported norm '{other}'")))
                .and_then(NormKind::from_p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormConversion {
    pub p: NormKind,
    pub n: usize,
    pub m: usize,
    pub k: f64,
}

impl NormConversion {
    pub fn new(p: NormKind, n: usize, m: usize) -> Result<Self> {
        Ok(NormConversion {
            p,
            n,
            m,
            k: norm_conversion_constant(p, n, m)?,
        })
    }
}

/// `K_{p,2} = n^(1/2 − 1/p) · m^(1/p − 1/2)` for input dim `n`, output dim `m`.
pub fn norm_conversion_constant(p: NormKind, n: usize, m: usize) -> Result<f64> {
    if n == 0 || m == 0 {
        return Err(ClbfError::invalid("dimensions must be at least 1"));
    }
    let e = 0.5 - p.inv_p();
    Ok((n as f64).powf(e) * (m as f64).powf(-e))
}

/// `K_{p,2} · ∏‖W_k‖₂`.
pub fn lipschitz_bound_lp(net: &Mlp, p: NormKind) -> Result<f64> {
    let k = norm_conversion_constant(p, net.input_dim(), net.output_dim())?;
    Ok(k * lipschitz_upper_bound_l2(net)?)
}

/// Descent margin that survives perturbations of radius `delta` for a
/// certificate with nominal margin `epsilon_r` and Lipschitz constant `l_p`.
/// Robustness is only claimed when the result is positive.
pub fn robust_margin(epsilon_r: f64, l_p: f64, delta: f64) -> f64 {
    epsilon_r - l_p * delta
}
