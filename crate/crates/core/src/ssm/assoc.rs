//! Associative composition of first-order linear recurrences and a
//! work-efficient (Blelloch) exclusive scan over it.

use rayon::prelude::*;

use crate::tensor::Real;

/// The affine map `h ↦ mul·h + add`, i.e. one or more recurrence steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine<T> {
    pub mul: T,
    pub add: T,
}

impl<T: Real> Affine<T> {
    pub fn identity() -> Self {
        Self {
            mul: T::one(),
            add: T::zero(),
        }
    }

    /// Applies `self` first, then `next`.
    #[inline]
    pub fn then(self, next: Self) -> Self {
        Self {
            mul: next.mul * self.mul,
            add: next.mul * self.add + next.add,
        }
    }

    #[inline]
    pub fn apply(self, h: T) -> T {
        self.mul * h + self.add
    }
}

/// Exclusive prefix composition: `out[j] = xs[0] then … then xs[j-1]`,
/// with `out[0]` the identity. Up-sweep builds subtree aggregates in place,
/// down-sweep distributes prefixes; each tree level runs its disjoint blocks
/// in parallel.
pub fn exclusive_scan<T: Real>(xs: &[Affine<T>]) -> Vec<Affine<T>> {
    if xs.is_empty() {
        return Vec::new();
    }
    let n = xs.len().next_power_of_two();
    let mut tree = xs.to_vec();
    tree.resize(n, Affine::identity());

    let mut stride = 2;
    while stride <= n {
        tree.par_chunks_mut(stride).for_each(|blk| {
            let s = blk.len();
            blk[s - 1] = blk[s / 2 - 1].then(blk[s - 1]);
        });
        stride *= 2;
    }

    tree[n - 1] = Affine::identity();
    let mut stride = n;
    while stride >= 2 {
        tree.par_chunks_mut(stride).for_each(|blk| {
            let s = blk.len();
            let left = blk[s / 2 - 1];
            blk[s / 2 - 1] = blk[s - 1];
            blk[s - 1] = blk[s - 1].then(left);
        });
        stride /= 2;
    }
    tree.truncate(xs.len());
    tree
}
