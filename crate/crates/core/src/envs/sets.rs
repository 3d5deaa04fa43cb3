use serde::{Deserialize, Serialize};

use crate::interval::IntervalBox;

/// A state-space set built from boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SetRegion {
    /// Union of closed boxes.
    Union(Vec<IntervalBox>),
    /// Every point outside a closed box.
    Complement(IntervalBox),
}

impl SetRegion {
    pub fn single(b: IntervalBox) -> Self {
        SetRegion::Union(vec![b])
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            SetRegion::Union(boxes) => boxes.iter().any(|b| b.contains(x)),
            SetRegion::Complement(b) => !b.contains(x),
        }
    }

    /// Exact: does `b` share at least one point with the set?
    pub fn intersects(&self, b: &IntervalBox) -> bool {
        match self {
            SetRegion::Union(boxes) => boxes.iter().any(|s| s.intersects(b)),
            SetRegion::Complement(inner) => !b.is_subset_of(inner),
        }
    }

    /// Sound containment test: `true` guarantees `b ⊆ set`. For unions it
    /// only recognises containment in a single member box.
    pub fn covers(&self, b: &IntervalBox) -> bool {
        match self {
            SetRegion::Union(boxes) => boxes.iter().any(|s| b.is_subset_of(s)),
            SetRegion::Complement(inner) => !b.intersects(inner),
        }
    }

    /// Some point of `b` inside the set, if one exists.
    pub fn point_in(&self, b: &IntervalBox) -> Option<Vec<f64>> {
        match self {
            SetRegion::Union(boxes) => boxes
                .iter()
                .find_map(|s| s.intersection(b))
                .map(|i| i.center()),
            SetRegion::Complement(inner) => {
                let mut x = b.center();
                for d in 0..b.dim() {
                    if b.lo()[d] < inner.lo()[d] {
                        x[d] = b.lo()[d];
                        return Some(x);
                    }
                    if b.hi()[d] > inner.hi()[d] {
                        x[d] = b.hi()[d];
                        return Some(x);
                    }
                }
                None
            }
        }
    }

    pub fn boxes(&self) -> &[IntervalBox] {
        match self {
            SetRegion::Union(b) => b,
            SetRegion::Complement(b) => std::slice::from_ref(b),
        }
    }
}
