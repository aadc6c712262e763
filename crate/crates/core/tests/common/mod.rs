//! Independent reference implementations used by the integration tests
//! and the acceptance suite.
#![allow(dead_code)]

use qrng_forge::BitSequence;

/// `y = T·x` over GF(2) with `T[i][j] = seed[m − 1 − i + j]`, one bit at
/// a time.
pub fn naive_toeplitz(seed: &[bool], x: &[bool], m: usize) -> Vec<bool> {
    let n = x.len();
    assert_eq!(seed.len(), n + m - 1);
    (0..m)
        .map(|i| (0..n).fold(false, |acc, j| acc ^ (seed[m - 1 - i + j] & x[j])))
        .collect()
}

pub fn to_bools(bits: &BitSequence) -> Vec<bool> {
    bits.iter().collect()
}

/// Best matching of two tag lists under `|Δt| ≤ window` found by
/// exhaustive search: maximum cardinality, then minimum total `|Δt|`.
/// Returns `(count, total |Δt|)`.
pub fn brute_force_matching(a: &[u64], b: &[u64], window: u64) -> (usize, u64) {
    fn go(i: usize, a: &[u64], b: &[u64], window: u64, used: &mut Vec<bool>) -> (usize, u64) {
        if i == a.len() {
            return (0, 0);
        }
        let mut best = go(i + 1, a, b, window, used);
        for j in 0..b.len() {
            if used[j] || a[i].abs_diff(b[j]) > window {
                continue;
            }
            used[j] = true;
            let (c, cost) = go(i + 1, a, b, window, used);
            used[j] = false;
            let cand = (c + 1, cost + a[i].abs_diff(b[j]));
            if cand.0 > best.0 || (cand.0 == best.0 && cand.1 < best.1) {
                best = cand;
            }
        }
        best
    }
    go(0, a, b, window, &mut vec![false; b.len()])
}

/// All pairs `(i, j)` the library matcher emits.
pub fn library_pairs(a: &[u64], b: &[u64], window: u64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    qrng_forge::coincidence::match_times(a, b, window, |i, j| out.push((i, j)));
    out
}
