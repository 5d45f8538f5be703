//! Kendall rank correlation with tie corrections, in O(n log n) following
//! Knight's merge-sort scheme.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Pair classification counts over all `n (n - 1) / 2` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairCounts {
    pub n: u64,
    pub concordant: u64,
    pub discordant: u64,
    /// Tied in x but not in y.
    pub ties_x_only: u64,
    /// Tied in y but not in x.
    pub ties_y_only: u64,
    pub ties_both: u64,
}

fn check(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::CountMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("Kendall tau needs at least two observations".into()));
    }
    for (i, v) in x.iter().chain(y).enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                row: i % x.len(),
                col: i / x.len(),
            });
        }
    }
    Ok(())
}

fn tied_pairs(sorted: impl Iterator<Item = impl PartialEq>) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    let mut prev = None;
    for v in sorted {
        if prev.as_ref() == Some(&v) {
            run += 1;
        } else {
            total += run * (run + 1) / 2;
            run = 0;
        }
        prev = Some(v);
    }
    total + run * (run + 1) / 2
}

/// Sorts `v` ascending and returns the number of inversions removed.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
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
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

pub fn pair_counts(x: &[f64], y: &[f64]) -> Result<PairCounts> {
    check(x, y)?;
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let tx = tied_pairs(order.iter().map(|&i| x[i].to_bits()));
    let txy = tied_pairs(order.iter().map(|&i| (x[i].to_bits(), y[i].to_bits())));

    let mut ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let mut buf = vec![0.0; n];
    let discordant = merge_count(&mut ys, &mut buf);
    let ty = tied_pairs(ys.iter().map(|v| v.to_bits()));

    // -0.0 and 0.0 compare equal but differ in bits; normalize beforehand.
    debug_assert!(x.iter().chain(y).all(|v| *v != 0.0 || v.is_sign_positive()));

    let concordant = n0 + txy - tx - ty - discordant;
    Ok(PairCounts {
        n: n as u64,
        concordant,
        discordant,
        ties_x_only: tx - txy,
        ties_y_only: ty - txy,
        ties_both: txy,
    })
}

fn normalized(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| if x == 0.0 { 0.0 } else { x }).collect()
}

/// Tie-corrected `(C - D) / sqrt((C + D + T_x)(C + D + T_y))`.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    let c = pair_counts(&normalized(x), &normalized(y))?;
    let left = c.concordant + c.discordant + c.ties_x_only;
    let right = c.concordant + c.discordant + c.ties_y_only;
    if left == 0 || right == 0 {
        return Err(Error::Degenerate(
            "tau-b is undefined when every pair is tied in x or in y".into(),
        ));
    }
    Ok((c.concordant as f64 - c.discordant as f64) / ((left as f64) * (right as f64)).sqrt())
}

fn distinct(v: &[f64]) -> usize {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.dedup_by(|a, b| a.total_cmp(b) == Ordering::Equal);
    s.len()
}

/// Stuart's `2m (C - D) / (n^2 (m - 1))` with `m` the smaller number of
/// distinct values in x and y.
pub fn kendall_tau_c(x: &[f64], y: &[f64]) -> Result<f64> {
    let (x, y) = (normalized(x), normalized(y));
    check(&x, &y)?;
    let mx = distinct(&x);
    let my = distinct(&y);
    let m = mx.min(my) as u64;
    if m < 2 {
        let side = if mx < 2 { "x" } else { "y" };
        return Err(Error::Degenerate(format!(
            "tau-c needs at least two distinct values; {side} has one"
        )));
    }
    let c = pair_counts(&x, &y)?;
    let n = c.n;
    Ok((2 * m) as f64 * (c.concordant as f64 - c.discordant as f64) / ((n * n * (m - 1)) as f64))
}
