mod common;

use common::{naive_toeplitz, to_bools};
use proptest::prelude::*;
use qrng_forge::extract::{extract_stream, output_length, seed_from_key, toeplitz_extract};
use qrng_forge::{BitSequence, ExtractorParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_bits(rng: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    (0..n).map(|_| rng.random_bool(0.5)).collect()
}

fn fast(seed: &[bool], x: &[bool], m: usize) -> Vec<bool> {
    let params = ExtractorParams::new(x.len(), m, 0.5, seed.iter().copied().collect()).unwrap();
    to_bools(&toeplitz_extract(&x.iter().copied().collect(), &params).unwrap())
}

#[test]
fn small_worked_example() {
    let seed = to_bools(&BitSequence::from_ascii01("110101").unwrap());
    let x = to_bools(&BitSequence::from_ascii01("1011").unwrap());
    let y = naive_toeplitz(&seed, &x, 3);
    // rows of T: 0101, 1010, 1101
    assert_eq!(y, vec![true, false, false]);
    assert_eq!(fast(&seed, &x, 3), y);
}

#[test]
fn one_by_one_and_zero_seed() {
    assert_eq!(fast(&[true], &[true], 1), vec![true]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_bits(&mut rng, 200);
    assert!(fast(&vec![false; 299], &x, 100).iter().all(|b| !b));
}

#[test]
fn matches_naive_on_small_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7e);
    for _ in 0..1000 {
        let n = rng.random_range(1..=64);
        let m = rng.random_range(1..=n);
        let seed = random_bits(&mut rng, n + m - 1);
        let x = random_bits(&mut rng, n);
        assert_eq!(fast(&seed, &x, m), naive_toeplitz(&seed, &x, m), "n={n} m={m}");
    }
}

#[test]
fn matches_naive_across_recursion_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7f);
    for &n in &[65, 127, 128, 1000, 1024, 1025, 3000, 4097, 9000] {
        for m in [1, n / 3 + 1, n - 1, n] {
            let seed = random_bits(&mut rng, n + m - 1);
            let x = random_bits(&mut rng, n);
            assert_eq!(fast(&seed, &x, m), naive_toeplitz(&seed, &x, m), "n={n} m={m}");
        }
    }
    // two levels of splitting
    let n = 20_000;
    let seed = random_bits(&mut rng, 2 * n - 1);
    let x = random_bits(&mut rng, n);
    assert_eq!(fast(&seed, &x, n), naive_toeplitz(&seed, &x, n));
}

proptest! {
    #[test]
    fn linear_over_gf2(seed_key in any::<u64>(), n in 1usize..700, frac in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_key);
        let m = ((n as f64 * frac) as usize).max(1);
        let seed = random_bits(&mut rng, n + m - 1);
        let x = random_bits(&mut rng, n);
        let x2 = random_bits(&mut rng, n);
        let sum: Vec<bool> = x.iter().zip(&x2).map(|(a, b)| a ^ b).collect();
        let lhs = fast(&seed, &sum, m);
        let rhs: Vec<bool> = fast(&seed, &x, m).iter().zip(fast(&seed, &x2, m)).map(|(a, b)| a ^ b).collect();
        prop_assert_eq!(lhs, rhs);
    }
}

#[test]
fn deterministic_and_balance_restoring() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let raw: BitSequence = (0..2_000_000).map(|_| rng.random_bool(0.6)).collect();
    let seed = seed_from_key([7; 32], 2_000_000);
    let (out, report) = extract_stream(&raw, 2f64.powi(-50), 1_000_000, &seed, 1.0).unwrap();
    let (again, _) = extract_stream(&raw, 2f64.powi(-50), 1_000_000, &seed, 1.0).unwrap();
    assert_eq!(out, again);
    assert!(report.h_min < 0.75 && report.h_min > 0.72, "h {}", report.h_min);
    assert!(out.len() >= 1_000_000);
    let n = out.len() as f64;
    let z = (2.0 * out.count_ones() as f64 - n) / n.sqrt();
    assert!(z.abs() < 4.0, "monobit z {z}");
}

#[test]
fn ratio_at_high_entropy() {
    let m = output_length(1_000_000, 0.99, 2f64.powi(-50)).unwrap();
    assert_eq!(m, 989_900);
    assert!(m as f64 / 1e6 >= 0.97);
}
