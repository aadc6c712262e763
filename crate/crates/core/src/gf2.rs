//! Toeplitz matrix–vector products over GF(2).
//!
//! Vectors here are polynomials stored least-significant-coefficient first
//! in u64 words. For a square size of `n = 64·s` bits the product is the
//! middle product
//!
//! `y_i = Σ_{j<n} r[n−1+i−j] · x_j`,  `0 ≤ i < n`,
//!
//! where `r` holds `2n − 1` coefficients (stored in `2s` words). Splitting
//! into halves gives three half-size products instead of four:
//!
//! ```text
//! P0 = MP(r[h..], x0 ⊕ x1)
//! P1 = MP(r[0..] ⊕ r[h..], x1)
//! P2 = MP(r[2h..] ⊕ r[h..], x0)
//! y0 = P0 ⊕ P1,  y1 = P0 ⊕ P2
//! ```
//!
//! Leaves are computed by carry-less multiplication: 512-bit
//! `vpclmulqdq` when the CPU has AVX-512, else `pclmulqdq`, else a table
//! multiply.

use std::sync::OnceLock;

/// Leaves at or below this many words use the direct product.
const LEAF_WORDS: usize = 128;

/// Carry-less 64×64 → 128 multiplication as `(lo, hi)`.
#[inline]
pub fn clmul_soft(a: u64, b: u64) -> (u64, u64) {
    // 4-bit windows of `a` against a small table of multiples of `b`.
    let mut table = [0u128; 16];
    let b = b as u128;
    for i in 1..16usize {
        let mut v = 0u128;
        for k in 0..4 {
            if i >> k & 1 == 1 {
                v ^= b << k;
            }
        }
        table[i] = v;
    }
    let mut acc = 0u128;
    for nib in (0..16).rev() {
        acc = (acc << 4) ^ table[(a >> (nib * 4) & 0xf) as usize];
    }
    (acc as u64, (acc >> 64) as u64)
}

// A leaf needs product words `s − 1 ..= 2s − 1` of `r·x`. Word `w` is
// `lo(c[w]) ⊕ hi(c[w − 1])` where `c[k]` sums the 128-bit partial
// products with `i + j = k`, so only `k ∈ [s − 2, 2s − 1]` matter.
// Leaves take `r` in reversed word order (`rv[i] = r[2s − 1 − i]`) so a
// column is a forward dot product.

#[inline(always)]
fn leaf_scan(rv: &[u64], x: &[u64], y: &mut [u64], mut column: impl FnMut(&[u64], &[u64]) -> (u64, u64)) {
    let s = x.len();
    let base = s - 1;
    // column k pairs x[j] with r[k − j] = rv[2s − 1 − k + j]
    let mut col = |k: isize| -> (u64, u64) {
        if k < 0 {
            return (0, 0);
        }
        let k = k as usize;
        let j_lo = k.saturating_sub(2 * s - 1);
        let j_hi = k.min(s - 1);
        let start = 2 * s - 1 - k + j_lo;
        column(&x[j_lo..=j_hi], &rv[start..start + j_hi + 1 - j_lo])
    };
    let mut hi_prev = col(base as isize - 1).1;
    let mut word = |k: usize, hi_prev: &mut u64| {
        let (lo, hi) = col(k as isize);
        let w = lo ^ *hi_prev;
        *hi_prev = hi;
        w
    };
    let mut prev = word(base, &mut hi_prev);
    for (k, out) in y.iter_mut().enumerate().take(s) {
        let next = word(base + k + 1, &mut hi_prev);
        *out = (prev >> 63) | (next << 1);
        prev = next;
    }
}

fn leaf_soft(rv: &[u64], x: &[u64], y: &mut [u64]) {
    leaf_scan(rv, x, y, |xs, rs| {
        let mut acc = 0u128;
        for (&a, &b) in xs.iter().zip(rs) {
            let (lo, hi) = clmul_soft(a, b);
            acc ^= (lo as u128) | ((hi as u128) << 64);
        }
        (acc as u64, (acc >> 64) as u64)
    })
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    use std::arch::x86_64::*;

    // The column loops use `lddqu` and all-lanes masked loads: unlike the
    // `loadu` intrinsics they carry no debug-build precondition checks.

    #[inline]
    #[target_feature(enable = "pclmulqdq,sse3")]
    fn tail128(xs: &[u64], rs: &[u64], mut acc: __m128i) -> (u64, u64) {
        let n = xs.len();
        assert_eq!(rs.len(), n);
        let (px, pr) = (xs.as_ptr(), rs.as_ptr());
        let mut i = 0;
        while i + 2 <= n {
            // SAFETY: words i and i + 1 lie inside both slices; unaligned loads
            let (a, b) = unsafe {
                (
                    _mm_lddqu_si128(px.wrapping_add(i).cast()),
                    _mm_lddqu_si128(pr.wrapping_add(i).cast()),
                )
            };
            acc = _mm_xor_si128(acc, _mm_clmulepi64_si128(a, b, 0x00));
            acc = _mm_xor_si128(acc, _mm_clmulepi64_si128(a, b, 0x11));
            i += 2;
        }
        if i < n {
            let p = _mm_clmulepi64_si128(_mm_cvtsi64_si128(xs[i] as i64), _mm_cvtsi64_si128(rs[i] as i64), 0);
            acc = _mm_xor_si128(acc, p);
        }
        (
            _mm_cvtsi128_si64(acc) as u64,
            _mm_cvtsi128_si64(_mm_unpackhi_epi64(acc, acc)) as u64,
        )
    }

    #[target_feature(enable = "pclmulqdq,sse3")]
    pub(super) fn leaf_pclmul(rv: &[u64], x: &[u64], y: &mut [u64]) {
        super::leaf_scan(rv, x, y, |xs, rs| tail128(xs, rs, _mm_setzero_si128()))
    }

    #[target_feature(enable = "avx512f,vpclmulqdq,pclmulqdq,sse3")]
    fn column512(xs: &[u64], rs: &[u64]) -> (u64, u64) {
        let n = xs.len();
        assert_eq!(rs.len(), n);
        let whole = n / 8 * 8;
        let (px, pr) = (xs.as_ptr(), rs.as_ptr());
        let mut acc = _mm512_setzero_si512();
        let mut i = 0;
        while i < whole {
            // SAFETY: words i..i + 8 lie inside both slices; unaligned loads
            let (a, b) = unsafe {
                (
                    _mm512_maskz_loadu_epi64(0xff, px.wrapping_add(i).cast()),
                    _mm512_maskz_loadu_epi64(0xff, pr.wrapping_add(i).cast()),
                )
            };
            acc = _mm512_ternarylogic_epi64(
                acc,
                _mm512_clmulepi64_epi128(a, b, 0x00),
                _mm512_clmulepi64_epi128(a, b, 0x11),
                0x96,
            );
            i += 8;
        }
        let lo = _mm_xor_si128(_mm512_extracti32x4_epi32(acc, 0), _mm512_extracti32x4_epi32(acc, 1));
        let hi = _mm_xor_si128(_mm512_extracti32x4_epi32(acc, 2), _mm512_extracti32x4_epi32(acc, 3));
        tail128(&xs[whole..], &rs[whole..], _mm_xor_si128(lo, hi))
    }

    #[target_feature(enable = "avx512f,vpclmulqdq,pclmulqdq,sse3")]
    pub(super) fn leaf_avx512(rv: &[u64], x: &[u64], y: &mut [u64]) {
        super::leaf_scan(rv, x, y, |xs, rs| column512(xs, rs))
    }
}

type LeafFn = fn(&[u64], &[u64], &mut [u64]);

fn leaf_fn() -> LeafFn {
    static LEAF: OnceLock<LeafFn> = OnceLock::new();
    *LEAF.get_or_init(|| {
        #[cfg(target_arch = "x86_64")]
        {
            if hardware_clmul()
                && std::arch::is_x86_feature_detected!("avx512f")
                && std::arch::is_x86_feature_detected!("vpclmulqdq")
            {
                // SAFETY: features checked above
                return |r, x, y| unsafe { x86::leaf_avx512(r, x, y) };
            }
            if hardware_clmul() {
                // SAFETY: features checked above
                return |r, x, y| unsafe { x86::leaf_pclmul(r, x, y) };
            }
        }
        leaf_soft
    })
}

/// Whether the hardware carry-less multiply path is in use.
pub fn hardware_clmul() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("pclmulqdq") && std::arch::is_x86_feature_detected!("sse3")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

/// Square size in words used for an `s`-word product: `leaf · 2^k ≥ s`
/// with `leaf ≤ LEAF_WORDS`.
pub fn padded_words(s: usize) -> usize {
    let mut levels = 0;
    while s.div_ceil(1 << levels) > LEAF_WORDS {
        levels += 1;
    }
    s.div_ceil(1 << levels) << levels
}

fn is_leaf(s: usize) -> bool {
    s <= LEAF_WORDS || s % 2 == 1
}

/// Middle product of `r` (`2s` words) and `x` (`s` words) into `y`
/// (`s` words).
pub fn middle_product(r: &[u64], x: &[u64], y: &mut [u64]) {
    assert_eq!(r.len(), 2 * x.len());
    MiddleProduct::new(r).apply(x, y);
}

/// A middle product with `r` fixed: the `r` operand of every leaf is
/// derived once, so each product only does the `x` side of the split.
#[derive(Clone, Debug)]
pub struct MiddleProduct {
    s: usize,
    /// Leaf `r` operands in depth-first order, each word-reversed.
    leaves: Vec<u64>,
}

impl MiddleProduct {
    pub fn new(r: &[u64]) -> Self {
        assert!(r.len().is_multiple_of(2), "r must hold 2s words");
        let mut leaves = Vec::new();
        Self::build(r, &mut leaves);
        Self { s: r.len() / 2, leaves }
    }

    fn build(r: &[u64], out: &mut Vec<u64>) {
        let s = r.len() / 2;
        if is_leaf(s) {
            out.extend(r.iter().rev());
            return;
        }
        let t = s / 2;
        Self::build(&r[t..3 * t], out);
        let mut rs: Vec<u64> = r[..2 * t].iter().zip(&r[t..3 * t]).map(|(a, b)| a ^ b).collect();
        Self::build(&rs, out);
        for ((d, &a), &b) in rs.iter_mut().zip(&r[2 * t..4 * t]).zip(&r[t..3 * t]) {
            *d = a ^ b;
        }
        Self::build(&rs, out);
    }

    /// Size in words.
    pub fn len(&self) -> usize {
        self.s
    }

    pub fn is_empty(&self) -> bool {
        self.s == 0
    }

    pub fn apply(&self, x: &[u64], y: &mut [u64]) {
        assert_eq!(x.len(), self.s);
        assert_eq!(y.len(), self.s);
        // each level takes 2t words for a half size t
        let mut scratch = vec![0u64; 2 * self.s];
        let mut pos = 0;
        mp_rec(&self.leaves, &mut pos, x, y, leaf_fn(), &mut scratch);
    }
}

fn mp_rec(leaves: &[u64], pos: &mut usize, x: &[u64], y: &mut [u64], leaf: LeafFn, scratch: &mut [u64]) {
    let s = x.len();
    if is_leaf(s) {
        leaf_or_split(&leaves[*pos..*pos + 2 * s], x, y, leaf);
        *pos += 2 * s;
        return;
    }
    let t = s / 2;
    let (buf, deeper) = scratch.split_at_mut(2 * t);
    let (xs, p) = buf.split_at_mut(t);
    let (x0, x1) = x.split_at(t);
    let (y0, y1) = y.split_at_mut(t);

    // y0 = y1 = P0 = MP(r[t..3t], x0 ⊕ x1)
    for ((d, &a), &b) in xs.iter_mut().zip(x0).zip(x1) {
        *d = a ^ b;
    }
    mp_rec(leaves, pos, xs, y0, leaf, deeper);
    y1.copy_from_slice(y0);

    // y0 ^= P1 = MP(r[0..2t] ⊕ r[t..3t], x1)
    mp_rec(leaves, pos, x1, p, leaf, deeper);
    for (d, &a) in y0.iter_mut().zip(p.iter()) {
        *d ^= a;
    }

    // y1 ^= P2 = MP(r[2t..4t] ⊕ r[t..3t], x0)
    mp_rec(leaves, pos, x0, p, leaf, deeper);
    for (d, &a) in y1.iter_mut().zip(p.iter()) {
        *d ^= a;
    }
}

fn leaf_or_split(rv: &[u64], x: &[u64], y: &mut [u64], leaf: LeafFn) {
    if x.len() <= LEAF_WORDS {
        leaf(rv, x, y);
    } else {
        // Odd sizes above the leaf bound never arise from `padded_words`;
        // compute them as a sum of leaf-sized tiles to stay correct.
        let s = x.len();
        y.fill(0);
        let mut part = [0u64; LEAF_WORDS];
        let mut ys = 0;
        while ys < s {
            let yl = LEAF_WORDS.min(s - ys);
            let mut xs = 0;
            while xs < s {
                let xl = yl.min(s - xs);
                tile(rv, x, ys, yl, xs, xl, s, &mut part[..yl], leaf);
                for k in 0..yl {
                    y[ys + k] ^= part[k];
                }
                xs += xl;
            }
            ys += yl;
        }
    }
}

/// Contribution of `x[xs..xs+xl]` to `y[ys..ys+yl]` within an `s`-word
/// middle product.
#[allow(clippy::too_many_arguments)]
fn tile(rv: &[u64], x: &[u64], ys: usize, yl: usize, xs: usize, xl: usize, s: usize, out: &mut [u64], leaf: LeafFn) {
    // Pad the tile to a yl×yl square: x beyond xl is zero.
    let mut xt = [0u64; LEAF_WORDS];
    xt[..xl].copy_from_slice(&x[xs..xs + xl]);
    // y_{ys+i} = Σ_j r[n−1+ys+i−xs−j]·x_{xs+j}; as a yl-word middle
    // product its r window starts at word s + ys − xs − yl.
    let start = (s + ys) as isize - xs as isize - yl as isize;
    let mut rt = [0u64; 2 * LEAF_WORDS];
    for k in 0..2 * yl {
        let idx = start + k as isize;
        if idx >= 0 && (idx as usize) < rv.len() {
            rt[2 * yl - 1 - k] = rv[rv.len() - 1 - idx as usize];
        }
    }
    leaf(&rt[..2 * yl], &xt[..yl], out);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_mp(r: &[u64], x: &[u64]) -> Vec<u64> {
        let n = x.len() * 64;
        let bit = |v: &[u64], k: usize| (v[k / 64] >> (k % 64)) & 1;
        let mut y = vec![0u64; x.len()];
        for i in 0..n {
            let mut acc = 0;
            for j in 0..n {
                acc ^= bit(r, n - 1 + i - j) & bit(x, j);
            }
            y[i / 64] |= acc << (i % 64);
        }
        y
    }

    fn words(state: &mut u64, n: usize) -> Vec<u64> {
        (0..n)
            .map(|_| {
                *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *state ^ (*state >> 29)
            })
            .collect()
    }

    #[test]
    fn soft_clmul_matches_bitwise() {
        let mut st = 7;
        for _ in 0..200 {
            let v = words(&mut st, 2);
            let mut want = 0u128;
            for k in 0..64 {
                if v[0] >> k & 1 == 1 {
                    want ^= (v[1] as u128) << k;
                }
            }
            assert_eq!(clmul_soft(v[0], v[1]), (want as u64, (want >> 64) as u64));
        }
    }

    #[test]
    fn leaves_agree_with_naive() {
        let mut st = 11;
        for s in 1..=LEAF_WORDS {
            let r = words(&mut st, 2 * s);
            let x = words(&mut st, s);
            let want = naive_mp(&r, &x);
            let rv: Vec<u64> = r.iter().rev().copied().collect();
            let mut y = vec![0; s];
            leaf_soft(&rv, &x, &mut y);
            assert_eq!(y, want, "soft leaf s={s}");
            #[cfg(target_arch = "x86_64")]
            if hardware_clmul() {
                unsafe { x86::leaf_pclmul(&rv, &x, &mut y) };
                assert_eq!(y, want, "pclmul leaf s={s}");
            }
            leaf_fn()(&rv, &x, &mut y);
            assert_eq!(y, want, "leaf s={s}");
        }
    }

    #[test]
    fn recursion_agrees_with_naive() {
        let mut st = 3;
        for s in [130usize, 200, 257] {
            let s = padded_words(s);
            let r = words(&mut st, 2 * s);
            let x = words(&mut st, s);
            let mut y = vec![0; s];
            middle_product(&r, &x, &mut y);
            assert_eq!(y, naive_mp(&r, &x), "s={s}");
        }
    }

    #[test]
    fn odd_sizes_use_tiles() {
        let mut st = 5;
        let s = 19;
        let r = words(&mut st, 2 * s);
        let x = words(&mut st, s);
        let mut y = vec![0; s];
        middle_product(&r, &x, &mut y);
        assert_eq!(y, naive_mp(&r, &x));
    }

    #[test]
    fn padding_sizes() {
        assert_eq!(padded_words(1), 1);
        assert_eq!(padded_words(128), 128);
        assert_eq!(padded_words(129), 130);
        assert_eq!(padded_words(15625), 15744);
    }
}
