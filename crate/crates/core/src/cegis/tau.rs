//! Bisection for the smallest feasible Lipschitz budget.

use log::info;

use crate::error::{ClbfError, Result};

#[derive(Debug, Clone)]
pub struct TauSearch<T> {
    /// Smallest budget found feasible.
    pub tau: f64,
    /// Largest budget found infeasible (the search's lower end).
    pub infeasible_below: f64,
    /// Artifact produced at `tau`.
    pub artifact: T,
    pub evaluations: usize,
}

/// Smallest `τ ∈ [lo, hi]` (to within `resolution`) for which `attempt`
/// returns an artifact. `hi` is tried first; failing there is an error.
pub fn tau_search<T, F>(lo: f64, hi: f64, resolution: f64, mut attempt: F) -> Result<TauSearch<T>>
where
    F: FnMut(f64) -> Result<Option<T>>,
{
    if !(lo >= 0.0 && hi > lo && resolution > 0.0) || !hi.is_finite() {
        return Err(ClbfError::Config(format!(
            "tau search needs 0 <= lo < hi and a positive resolution (got [{lo}, {hi}], {resolution})"
        )));
    }
    let mut evaluations = 1;
    let mut best = attempt(hi)?.ok_or_else(|| {
        ClbfError::Config(format!("infeasible: even tau = {hi} does not converge"))
    })?;
    let (mut a, mut b) = (lo, hi);
    while b - a > resolution {
        let mid = 0.5 * (a + b);
        evaluations += 1;
        match attempt(mid)? {
            Some(art) => {
                info!("tau {mid:.4}: feasible");
                best = art;
                b = mid;
            }
            None => {
                info!("tau {mid:.4}: infeasible");
                a = mid;
            }
        }
    }
    Ok(TauSearch {
        tau: b,
        infeasible_below: a,
        artifact: best,
        evaluations,
    })
}
