//! Randomness validation: autocorrelation, eight SP 800-22 tests, the
//! two-level uniformity/proportion analysis, and bit export.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_ur;
use thiserror::Error;

use crate::bits::BitSequence;

pub const DEFAULT_SIGNIFICANCE: f64 = 0.01;
/// Uniformity threshold on P_T.
pub const UNIFORMITY_THRESHOLD: f64 = 1e-4;
/// Fewest P-values for a meaningful uniformity check.
pub const MIN_UNIFORMITY_SAMPLES: usize = 55;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("{test}: sequence of {got} bits is below the minimum {need}")]
    Length { test: &'static str, got: usize, need: usize },
    #[error("autocorrelation undefined for a constant sequence")]
    Constant,
    #[error("sample size: {0}")]
    SampleSize(String),
    #[error("invalid parameter: {0}")]
    Param(String),
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// Upper regularized incomplete gamma `Q(a, x)`.
pub fn igamc(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x.is_infinite() {
        0.0
    } else {
        gamma_ur(a, x)
    }
}

/// Autocorrelation coefficients `a_1 .. a_max_lag`.
pub fn autocorr(bits: &BitSequence, max_lag: usize) -> Result<Vec<f64>> {
    let n = bits.len();
    if n <= 10 * max_lag {
        return Err(StatsError::Length {
            test: "autocorr",
            got: n,
            need: 10 * max_lag + 1,
        });
    }
    let ones = bits.count_ones();
    if ones == 0 || ones == n as u64 {
        return Err(StatsError::Constant);
    }
    let nf = n as f64;
    let mean = ones as f64 / nf;
    let denom = ones as f64 * (1.0 - mean) * (1.0 - mean) + (nf - ones as f64) * mean * mean;

    // ones among the first k and the last k bits
    let mut head = vec![0u64; max_lag + 1];
    let mut tail = vec![0u64; max_lag + 1];
    for k in 1..=max_lag {
        head[k] = head[k - 1] + bits.get(k - 1) as u64;
        tail[k] = tail[k - 1] + bits.get(n - k) as u64;
    }

    (1..=max_lag)
        .into_par_iter()
        .map(|k| {
            let len = n - k;
            let a = bits.slice(0, len);
            let b = bits.slice(k, len);
            let both: u64 = a
                .words()
                .iter()
                .zip(b.words())
                .map(|(x, y)| (x & y).count_ones() as u64)
                .sum();
            let front = (ones - tail[k]) as f64;
            let back = (ones - head[k]) as f64;
            let num = both as f64 - mean * (front + back) + len as f64 * mean * mean;
            Ok(num / denom)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestId {
    Frequency,
    BlockFrequency,
    Runs,
    LongestRun,
    CumulativeSumsFwd,
    CumulativeSumsRev,
    Serial,
    ApproximateEntropy,
}

impl TestId {
    pub const ALL: [TestId; 8] = [
        TestId::Frequency,
        TestId::BlockFrequency,
        TestId::Runs,
        TestId::LongestRun,
        TestId::CumulativeSumsFwd,
        TestId::CumulativeSumsRev,
        TestId::Serial,
        TestId::ApproximateEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestId::Frequency => "frequency",
            TestId::BlockFrequency => "block_frequency",
            TestId::Runs => "runs",
            TestId::LongestRun => "longest_run",
            TestId::CumulativeSumsFwd => "cumulative_sums_fwd",
            TestId::CumulativeSumsRev => "cumulative_sums_rev",
            TestId::Serial => "serial",
            TestId::ApproximateEntropy => "approximate_entropy",
        }
    }
}

impl fmt::Display for TestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TestId {
    type Err = StatsError;

    fn from_str(s: &str) -> Result<Self> {
        TestId::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| StatsError::Param(format!("unknown test {s:?}")))
    }
}

/// Per-test parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestParams {
    /// Block-frequency block length M.
    pub block_len: usize,
    /// Serial pattern length m.
    pub serial_m: usize,
    /// Approximate-entropy pattern length m.
    pub apen_m: usize,
}

impl Default for TestParams {
    fn default() -> Self {
        Self {
            block_len: 128,
            serial_m: 2,
            apen_m: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test_id: TestId,
    pub p_value: f64,
    pub pass: bool,
    /// Secondary P-values (the serial test's ∇²ψ² statistic).
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub aux_p_values: Vec<f64>,
}

fn need(test: &'static str, got: usize, need: usize) -> Result<()> {
    if got < need {
        Err(StatsError::Length { test, got, need })
    } else {
        Ok(())
    }
}

/// Monobit frequency test.
pub fn frequency(bits: &BitSequence) -> f64 {
    let n = bits.len() as f64;
    let s = 2.0 * bits.count_ones() as f64 - n;
    erfc(s.abs() / n.sqrt() / std::f64::consts::SQRT_2)
}

pub fn block_frequency(bits: &BitSequence, m: usize) -> f64 {
    let blocks = bits.len() / m;
    let chi2: f64 = (0..blocks)
        .map(|b| {
            let pi = bits.slice(b * m, m).count_ones() as f64 / m as f64;
            (pi - 0.5) * (pi - 0.5)
        })
        .sum::<f64>()
        * 4.0
        * m as f64;
    igamc(blocks as f64 / 2.0, chi2 / 2.0)
}

pub fn runs(bits: &BitSequence) -> f64 {
    let n = bits.len();
    let nf = n as f64;
    let pi = bits.count_ones() as f64 / nf;
    if (pi - 0.5).abs() >= 2.0 / nf.sqrt() {
        return 0.0;
    }
    let a = bits.slice(0, n - 1);
    let b = bits.slice(1, n - 1);
    let changes: u64 = a
        .words()
        .iter()
        .zip(b.words())
        .map(|(x, y)| (x ^ y).count_ones() as u64)
        .sum();
    let v = changes as f64 + 1.0;
    let num = (v - 2.0 * nf * pi * (1.0 - pi)).abs();
    erfc(num / (2.0 * (2.0 * nf).sqrt() * pi * (1.0 - pi)))
}

/// Longest run of ones in a block, using the standard table for `n`.
pub fn longest_run(bits: &BitSequence) -> f64 {
    let n = bits.len();
    let (m, lo, pi): (usize, usize, &[f64]) = if n < 6272 {
        (8, 1, &[0.21484375, 0.3671875, 0.23046875, 0.1875])
    } else if n < 750_000 {
        (
            128,
            4,
            &[0.1174035788, 0.242955959, 0.249363483, 0.17517706, 0.102701071, 0.112398847],
        )
    } else {
        (
            10_000,
            10,
            &[0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727],
        )
    };
    let k = pi.len() - 1;
    let blocks = n / m;
    let mut v = vec![0u64; pi.len()];
    for b in 0..blocks {
        let mut best = 0usize;
        let mut run = 0usize;
        for i in b * m..(b + 1) * m {
            if bits.get(i) {
                run += 1;
                best = best.max(run);
            } else {
                run = 0;
            }
        }
        let class = best.clamp(lo, lo + k) - lo;
        v[class] += 1;
    }
    let nb = blocks as f64;
    let chi2: f64 = v
        .iter()
        .zip(pi)
        .map(|(&obs, &p)| (obs as f64 - nb * p).powi(2) / (nb * p))
        .sum();
    igamc(k as f64 / 2.0, chi2 / 2.0)
}

fn phi(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Cumulative sums, forward (`reverse = false`) or backward.
pub fn cumulative_sums(bits: &BitSequence, reverse: bool) -> f64 {
    let n = bits.len() as i64;
    let mut s = 0i64;
    let mut z = 0i64;
    let mut step = |b: bool| {
        s += if b { 1 } else { -1 };
        z = z.max(s.abs());
    };
    if reverse {
        for i in (0..bits.len()).rev() {
            step(bits.get(i));
        }
    } else {
        for b in bits.iter() {
            step(b);
        }
    }
    if z == 0 {
        return 1.0;
    }
    let nf = n as f64;
    let zf = z as f64;
    let sq = nf.sqrt();
    // integer bounds follow the reference implementation (truncating division)
    let mut sum1 = 0.0;
    for k in ((-n / z + 1) / 4)..=((n / z - 1) / 4) {
        let k = k as f64;
        sum1 += phi((4.0 * k + 1.0) * zf / sq) - phi((4.0 * k - 1.0) * zf / sq);
    }
    let mut sum2 = 0.0;
    for k in ((-n / z - 3) / 4)..=((n / z - 1) / 4) {
        let k = k as f64;
        sum2 += phi((4.0 * k + 3.0) * zf / sq) - phi((4.0 * k + 1.0) * zf / sq);
    }
    (1.0 - sum1 + sum2).clamp(0.0, 1.0)
}

/// Counts of overlapping `m`-bit patterns with wrap-around.
fn pattern_counts(bits: &BitSequence, m: usize) -> Vec<u64> {
    let n = bits.len();
    let mut counts = vec![0u64; 1 << m];
    if m == 0 {
        counts[0] = n as u64;
        return counts;
    }
    let mask = (1usize << m) - 1;
    let mut v = 0usize;
    for i in 0..m - 1 {
        v = (v << 1) | bits.get(i) as usize;
    }
    for i in 0..n {
        v = ((v << 1) | bits.get((i + m - 1) % n) as usize) & mask;
        counts[v] += 1;
    }
    counts
}

fn psi2(bits: &BitSequence, m: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let n = bits.len() as f64;
    let sum: f64 = pattern_counts(bits, m).iter().map(|&c| (c as f64) * (c as f64)).sum();
    sum * (1u64 << m) as f64 / n - n
}

/// Serial test: `(P1, P2)` from ∇ψ² and ∇²ψ².
pub fn serial(bits: &BitSequence, m: usize) -> (f64, f64) {
    let p0 = psi2(bits, m);
    let p1 = psi2(bits, m - 1);
    let p2 = if m >= 2 { psi2(bits, m - 2) } else { 0.0 };
    let d1 = p0 - p1;
    let d2 = p0 - 2.0 * p1 + p2;
    let a1 = 2f64.powi(m as i32 - 2);
    let a2 = 2f64.powi(m as i32 - 3);
    (igamc(a1, d1 / 2.0), igamc(a2, d2 / 2.0))
}

pub fn approximate_entropy(bits: &BitSequence, m: usize) -> f64 {
    let n = bits.len() as f64;
    let phi_m = |len: usize| -> f64 {
        pattern_counts(bits, len)
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                p * p.ln()
            })
            .sum()
    };
    let apen = phi_m(m) - phi_m(m + 1);
    let chi2 = 2.0 * n * (std::f64::consts::LN_2 - apen);
    igamc(2f64.powi(m as i32 - 1), chi2 / 2.0)
}

/// Runs one test and judges it at `significance`.
pub fn run_test_with(
    id: TestId,
    bits: &BitSequence,
    params: &TestParams,
    significance: f64,
) -> Result<TestResult> {
    let n = bits.len();
    let mut aux = Vec::new();
    let p = match id {
        TestId::Frequency => {
            need(id.name(), n, 100)?;
            frequency(bits)
        }
        TestId::BlockFrequency => {
            need(id.name(), n, 100.max(params.block_len))?;
            if params.block_len < 2 {
                return Err(StatsError::Param("block length must be at least 2".into()));
            }
            block_frequency(bits, params.block_len)
        }
        TestId::Runs => {
            need(id.name(), n, 100)?;
            runs(bits)
        }
        TestId::LongestRun => {
            need(id.name(), n, 128)?;
            longest_run(bits)
        }
        TestId::CumulativeSumsFwd => {
            need(id.name(), n, 100)?;
            cumulative_sums(bits, false)
        }
        TestId::CumulativeSumsRev => {
            need(id.name(), n, 100)?;
            cumulative_sums(bits, true)
        }
        TestId::Serial => {
            let m = params.serial_m;
            if m < 2 {
                return Err(StatsError::Param("serial pattern length must be at least 2".into()));
            }
            // m < floor(log2 n) − 2
            need(id.name(), n, 100.max(1 << (m + 3)))?;
            let (p1, p2) = serial(bits, m);
            aux.push(p2);
            p1
        }
        TestId::ApproximateEntropy => {
            let m = params.apen_m;
            if m < 1 {
                return Err(StatsError::Param("approximate-entropy pattern length must be positive".into()));
            }
            // m < floor(log2 n) − 5
            need(id.name(), n, 100.max(1 << (m + 6)))?;
            approximate_entropy(bits, m)
        }
    };
    let p = p.clamp(0.0, 1.0);
    Ok(TestResult {
        test_id: id,
        p_value: p,
        pass: p >= significance,
        aux_p_values: aux,
    })
}

/// Runs one test with default parameters at significance 0.01.
pub fn run_test(id: TestId, bits: &BitSequence) -> Result<TestResult> {
    run_test_with(id, bits, &TestParams::default(), DEFAULT_SIGNIFICANCE)
}

/// Chi-square uniformity of P-values over ten bins, `P_T`, without the
/// sample-size check.
pub fn pvalue_uniformity_unchecked(pvalues: &[f64]) -> f64 {
    let s = pvalues.len() as f64;
    if s == 0.0 {
        return 0.0;
    }
    let mut bins = [0u64; 10];
    for &p in pvalues {
        bins[((p * 10.0).floor() as usize).min(9)] += 1;
    }
    let expect = s / 10.0;
    let chi2: f64 = bins.iter().map(|&f| (f as f64 - expect).powi(2) / expect).sum();
    igamc(4.5, chi2 / 2.0)
}

pub fn pvalue_uniformity(pvalues: &[f64]) -> Result<f64> {
    if pvalues.len() < MIN_UNIFORMITY_SAMPLES {
        return Err(StatsError::SampleSize(format!(
            "uniformity needs at least {MIN_UNIFORMITY_SAMPLES} P-values, got {}",
            pvalues.len()
        )));
    }
    Ok(pvalue_uniformity_unchecked(pvalues))
}

/// Acceptable pass proportion `p̂ ± 3·sqrt(p̂(1−p̂)/n)`, `p̂ = 1 − α`.
pub fn proportion_range(n_sequences: usize, significance: f64) -> (f64, f64) {
    let p = 1.0 - significance;
    let half = 3.0 * (p * (1.0 - p) / n_sequences as f64).sqrt();
    (p - half, p + half)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub test_id: TestId,
    pub p_values: Vec<f64>,
    pub passed: usize,
    pub proportion: f64,
    pub uniformity_p: f64,
    /// False when fewer than 55 sequences back the uniformity figure.
    pub uniformity_sample_ok: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryReport {
    pub n_sequences: usize,
    pub seq_len: usize,
    pub significance: f64,
    pub proportion_range: (f64, f64),
    pub tests: Vec<TestSummary>,
    pub pass: bool,
}

impl BatteryReport {
    pub fn test(&self, id: TestId) -> Option<&TestSummary> {
        self.tests.iter().find(|t| t.test_id == id)
    }

    /// Text table of uniformity P-values and proportions per test.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<22} {:>12} {:>10} {:>7}\n",
            "test", "P_T", "proportion", "result"
        );
        for t in &self.tests {
            out.push_str(&format!(
                "{:<22} {:>12.6} {:>6}/{:<3} {:>7}\n",
                t.test_id.name(),
                t.uniformity_p,
                t.passed,
                t.p_values.len(),
                if t.pass { "PASS" } else { "FAIL" }
            ));
        }
        out.push_str(&format!(
            "proportion range ({:.4}, {:.4}); battery {}\n",
            self.proportion_range.0,
            self.proportion_range.1,
            if self.pass { "PASS" } else { "FAIL" }
        ));
        out
    }
}

/// Splits `bits` into `n_sequences` sequences of `seq_len` and runs all
/// eight tests on each.
pub fn run_battery(
    bits: &BitSequence,
    n_sequences: usize,
    seq_len: usize,
    significance: f64,
    params: &TestParams,
) -> Result<BatteryReport> {
    if n_sequences == 0 || seq_len == 0 {
        return Err(StatsError::Param("battery needs sequences of positive length".into()));
    }
    if !(significance > 0.0 && significance < 1.0) {
        return Err(StatsError::Param(format!("significance {significance} outside (0, 1)")));
    }
    let total = n_sequences
        .checked_mul(seq_len)
        .ok_or_else(|| StatsError::Param("battery size overflows".into()))?;
    if bits.len() < total {
        return Err(StatsError::SampleSize(format!(
            "battery needs {total} bits, got {}",
            bits.len()
        )));
    }
    let jobs: Vec<(usize, TestId)> = (0..n_sequences)
        .flat_map(|s| TestId::ALL.into_iter().map(move |t| (s, t)))
        .collect();
    let results: Vec<TestResult> = jobs
        .par_iter()
        .map(|&(s, t)| run_test_with(t, &bits.slice(s * seq_len, seq_len), params, significance))
        .collect::<Result<_>>()?;

    let range = proportion_range(n_sequences, significance);
    let tests: Vec<TestSummary> = TestId::ALL
        .iter()
        .enumerate()
        .map(|(k, &id)| {
            let p_values: Vec<f64> = (0..n_sequences)
                .map(|s| results[s * TestId::ALL.len() + k].p_value)
                .collect();
            let passed = p_values.iter().filter(|&&p| p >= significance).count();
            let proportion = passed as f64 / n_sequences as f64;
            let uniformity_p = pvalue_uniformity_unchecked(&p_values);
            let pass = proportion >= range.0
                && proportion <= range.1.max(1.0)
                && uniformity_p >= UNIFORMITY_THRESHOLD;
            TestSummary {
                test_id: id,
                passed,
                proportion,
                uniformity_p,
                uniformity_sample_ok: n_sequences >= MIN_UNIFORMITY_SAMPLES,
                pass,
                p_values,
            }
        })
        .collect();
    let pass = tests.iter().all(|t| t.pass);
    Ok(BatteryReport {
        n_sequences,
        seq_len,
        significance,
        proportion_range: range,
        tests,
        pass,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    RawPacked,
    Ascii01,
}

impl FromStr for ExportFormat {
    type Err = StatsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw_packed" => Ok(ExportFormat::RawPacked),
            "ascii01" => Ok(ExportFormat::Ascii01),
            other => Err(StatsError::Param(format!("unknown export format {other:?}"))),
        }
    }
}

pub fn export_bits(bits: &BitSequence, format: ExportFormat) -> Vec<u8> {
    match format {
        ExportFormat::RawPacked => bits.to_packed_bytes(),
        ExportFormat::Ascii01 => {
            let mut out = Vec::with_capacity(bits.len());
            out.extend(bits.iter().map(|b| if b { b'1' } else { b'0' }));
            out
        }
    }
}
