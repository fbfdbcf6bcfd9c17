use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pair counts of Kendall's tau-b. A pair tied in both `x` and `y` counts
/// towards none of `p`, `q`, `t`, `u`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KendallResult {
    /// Concordant pairs.
    pub p: u64,
    /// Discordant pairs.
    pub q: u64,
    /// Pairs tied in `x` only.
    pub t: u64,
    /// Pairs tied in `y` only.
    pub u: u64,
    /// `(P - Q) / sqrt((P + Q + T)(P + Q + U))`; `None` when the denominator
    /// is zero (one input entirely tied).
    pub tau: Option<f64>,
}

impl KendallResult {
    pub(crate) fn from_counts(p: u64, q: u64, t: u64, u: u64) -> Self {
        let den = ((p + q + t) as f64) * ((p + q + u) as f64);
        let tau = if den > 0.0 {
            Some(((p as f64 - q as f64) / den.sqrt()).clamp(-1.0, 1.0))
        } else {
            None
        };
        Self { p, q, t, u, tau }
    }
}

fn check(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::shape("kendall_tau_b", format!("lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Input("kendall_tau_b needs at least 2 observations".into()));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::Input("kendall_tau_b input contains NaN".into()));
    }
    Ok(())
}

/// Exact tau-b by enumerating every pair.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<KendallResult> {
    check(x, y)?;
    let (mut p, mut q, mut t, mut u) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i].partial_cmp(&x[j]).expect("no NaN");
            let dy = y[i].partial_cmp(&y[j]).expect("no NaN");
            use std::cmp::Ordering::Equal;
            match (dx, dy) {
                (Equal, Equal) => {}
                (Equal, _) => t += 1,
                (_, Equal) => u += 1,
                (a, b) if a == b => p += 1,
                _ => q += 1,
            }
        }
    }
    Ok(KendallResult::from_counts(p, q, t, u))
}

fn tie_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Number of pairs `i < j` with `v[i] > v[j]`; sorts `v` in place.
fn count_inversions(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    let mut swaps = 0u64;
    let mut width = 1;
    buf.clear();
    buf.resize(n, 0.0);
    while width < n {
        let mut start = 0;
        while start < n {
            let mid = (start + width).min(n);
            let end = (start + 2 * width).min(n);
            let (mut i, mut j, mut k) = (start, mid, start);
            while i < mid && j < end {
                if v[j] < v[i] {
                    buf[k] = v[j];
                    swaps += (mid - i) as u64;
                    j += 1;
                } else {
                    buf[k] = v[i];
                    i += 1;
                }
                k += 1;
            }
            buf[k..k + (mid - i)].copy_from_slice(&v[i..mid]);
            k += mid - i;
            buf[k..k + (end - j)].copy_from_slice(&v[j..end]);
            start = end;
        }
        v.copy_from_slice(buf);
        width *= 2;
    }
    swaps
}

/// `x` pre-sorted once so many `y` vectors can be ranked against it.
#[derive(Clone, Debug)]
pub(crate) struct SortedX {
    order: Vec<usize>,
    /// Start offsets of runs of equal `x` in `order`, plus the end.
    groups: Vec<usize>,
    x_ties: u64,
}

impl SortedX {
    pub fn new(x: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
        let mut groups = vec![0];
        for i in 1..order.len() {
            if x[order[i]] != x[order[i - 1]] {
                groups.push(i);
            }
        }
        groups.push(order.len());
        let x_ties = groups.windows(2).map(|w| ((w[1] - w[0]) * (w[1] - w[0] - 1) / 2) as u64).sum();
        Self { order, groups, x_ties }
    }

    /// Tau-b of the stored `x` against `y(i)` for `i` in `0..n`.
    pub fn tau_with(&self, y: impl Fn(usize) -> f64, scratch: &mut Scratch) -> KendallResult {
        let n = self.order.len() as u64;
        let n0 = n * (n - 1) / 2;
        let ys = &mut scratch.ys;
        ys.clear();
        ys.extend(self.order.iter().map(|&i| y(i)));
        // Within a run of tied x, sort y so joint ties are adjacent and the
        // run contributes no inversions.
        let mut joint = 0u64;
        for w in self.groups.windows(2) {
            if w[1] - w[0] > 1 {
                let g = &mut ys[w[0]..w[1]];
                g.sort_by(f64::total_cmp);
                joint += tie_pairs(g);
            }
        }
        let q = count_inversions(ys, &mut scratch.buf);
        let y_ties = tie_pairs(ys);
        let t = self.x_ties - joint;
        let u = y_ties - joint;
        let p = n0 + joint - self.x_ties - y_ties - q;
        KendallResult::from_counts(p, q, t, u)
    }
}

#[derive(Default)]
pub(crate) struct Scratch {
    ys: Vec<f64>,
    buf: Vec<f64>,
}

/// Same counts as [`kendall_tau_b`] in `O(m log m)` (Knight's algorithm).
pub fn kendall_tau_b_fast(x: &[f64], y: &[f64]) -> Result<KendallResult> {
    check(x, y)?;
    Ok(SortedX::new(x).tau_with(|i| y[i], &mut Scratch::default()))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn hand_case() {
        let r = kendall_tau_b(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!((r.p, r.q, r.t, r.u), (5, 1, 0, 0));
        assert!((r.tau.unwrap() - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn identity_reverse_and_undefined() {
        let x = [3.0, 1.0, 2.0, 5.0];
        assert_eq!(kendall_tau_b(&x, &x).unwrap().tau, Some(1.0));
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(kendall_tau_b(&x, &y).unwrap().tau, Some(-1.0));
        assert_eq!(kendall_tau_b(&x, &[1.0; 4]).unwrap().tau, None);
        assert!(kendall_tau_b(&x, &[1.0; 3]).is_err());
    }

    #[test]
    fn heavy_ties_on_both_sides() {
        // Tied pairs in x plus tied pairs in y exceed the pair count.
        let x = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let y = [0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let slow = kendall_tau_b(&x, &y).unwrap();
        assert_eq!(slow, kendall_tau_b_fast(&x, &y).unwrap());
        assert_eq!((slow.p, slow.q, slow.t, slow.u), (0, 1, 4, 4));
    }

    proptest! {
        #[test]
        fn fast_matches_pairwise(
            xy in (2usize..60).prop_flat_map(|n| (
                prop::collection::vec(0i32..6, n),
                prop::collection::vec(0i32..6, n),
            ))
        ) {
            let x: Vec<f64> = xy.0.iter().map(|&v| v as f64).collect();
            let y: Vec<f64> = xy.1.iter().map(|&v| v as f64).collect();
            prop_assert_eq!(kendall_tau_b(&x, &y).unwrap(), kendall_tau_b_fast(&x, &y).unwrap());
        }

        #[test]
        fn invariant_under_increasing_transform(
            xy in (2usize..40).prop_flat_map(|n| (
                prop::collection::vec(-5i32..5, n),
                prop::collection::vec(-5i32..5, n),
            ))
        ) {
            let x: Vec<f64> = xy.0.iter().map(|&v| v as f64).collect();
            let y: Vec<f64> = xy.1.iter().map(|&v| v as f64).collect();
            let fx: Vec<f64> = x.iter().map(|v| v.powi(3) + 2.0 * v).collect();
            let gy: Vec<f64> = y.iter().map(|v| v.exp()).collect();
            prop_assert_eq!(kendall_tau_b(&x, &y).unwrap(), kendall_tau_b(&fx, &gy).unwrap());
        }
    }
}
