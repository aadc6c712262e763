//! Quantumness metrics: fringe visibility, CHSH Bell parameter and
//! cross-correlation g²(0), evaluated over consecutive blocks of
//! certification coincidences.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coincidence::{CoincidenceConfig, CoincidenceEvent};
use crate::source::AnalyzerSchedule;
use crate::PS_PER_SECOND;

/// Minimum number of certification events per block.
pub const MIN_BLOCK: usize = 4000;
pub const DEFAULT_BLOCK: usize = 100_000;
/// Classical bound on the cross-correlation g²(0).
pub const G2_CLASSICAL_BOUND: f64 = 2.0;
/// Human-readable statement of the g²(0) estimator, copied into reports.
pub const G2_CONVENTION: &str =
    "cross-correlation g2 = n_coinc * T / (n_C1 * n_C2 * 2 * tau); classical bound 2";

#[derive(Debug, Error, PartialEq)]
pub enum CertifyError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("fringe fit failed: {0}")]
    Fit(String),
    #[error("invalid certifier configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, CertifyError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Uncertified,
    CertifiedG2,
    CertifiedBell,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Uncertified => "UNCERTIFIED",
            Verdict::CertifiedG2 => "CERTIFIED_G2",
            Verdict::CertifiedBell => "CERTIFIED_BELL",
        }
    }

    pub fn is_certified(self) -> bool {
        self != Verdict::Uncertified
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Analyzer angles (degrees) for the CHSH combination.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChshSettings {
    pub a: f64,
    pub a_prime: f64,
    pub b: f64,
    pub b_prime: f64,
}

impl Default for ChshSettings {
    fn default() -> Self {
        Self {
            a: 0.0,
            a_prime: 45.0,
            b: 67.5,
            b_prime: 22.5,
        }
    }
}

impl ChshSettings {
    pub fn schedule(&self, dwell_ps: u64) -> std::result::Result<AnalyzerSchedule, crate::source::SourceError> {
        AnalyzerSchedule::chsh(self.a, self.a_prime, self.b, self.b_prime, dwell_ps)
    }

    /// C1 angles `[a, a⊥, a', a'⊥]`.
    pub fn c1_angles(&self) -> [f64; 4] {
        [self.a, self.a + 90.0, self.a_prime, self.a_prime + 90.0]
    }

    /// C2 angles `[b, b⊥, b', b'⊥]`.
    pub fn c2_angles(&self) -> [f64; 4] {
        [self.b, self.b + 90.0, self.b_prime, self.b_prime + 90.0]
    }

    /// Maps an analyzer setting to `(combination, outcome)`.
    ///
    /// Combinations are ordered `(a,b), (a,b'), (a',b), (a',b')`; outcomes
    /// follow [`FourCounts`]: `θθ, ⊥⊥, θ⊥, ⊥θ`.
    pub fn classify(&self, theta1: f64, theta2: f64) -> Option<(usize, usize)> {
        let i1 = self.c1_angles().iter().position(|&x| same_axis(x, theta1))?;
        let i2 = self.c2_angles().iter().position(|&x| same_axis(x, theta2))?;
        let combo = (i1 / 2) * 2 + i2 / 2;
        let outcome = match (i1 % 2, i2 % 2) {
            (0, 0) => 0,
            (1, 1) => 1,
            (0, 1) => 2,
            _ => 3,
        };
        Some((combo, outcome))
    }
}

/// Polarizer angles are equivalent modulo 180°.
fn same_axis(x: f64, y: f64) -> bool {
    let d = (x - y).rem_euclid(180.0);
    d < 1e-6 || 180.0 - d < 1e-6
}

/// Counts (or exposure-normalized rates) for one analyzer combination.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FourCounts {
    /// N(θ1, θ2)
    pub same: f64,
    /// N(θ1⊥, θ2⊥)
    pub both_perp: f64,
    /// N(θ1, θ2⊥)
    pub perp2: f64,
    /// N(θ1⊥, θ2)
    pub perp1: f64,
}

impl FourCounts {
    pub fn new(same: f64, both_perp: f64, perp2: f64, perp1: f64) -> Self {
        Self {
            same,
            both_perp,
            perp2,
            perp1,
        }
    }

    pub fn total(&self) -> f64 {
        self.same + self.both_perp + self.perp2 + self.perp1
    }

    fn get_mut(&mut self, outcome: usize) -> &mut f64 {
        match outcome {
            0 => &mut self.same,
            1 => &mut self.both_perp,
            2 => &mut self.perp2,
            _ => &mut self.perp1,
        }
    }
}

/// The four CHSH combinations with the raw event count behind each.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCounts {
    /// Ordered `(a,b), (a,b'), (a',b), (a',b')`.
    pub settings: [FourCounts; 4],
    pub events: [u64; 4],
}

pub fn correlation_e(c: &FourCounts) -> Result<f64> {
    let total = c.total();
    if !(total > 0.0) {
        return Err(CertifyError::InsufficientData(
            "correlation needs a positive total count".into(),
        ));
    }
    let e = (c.same + c.both_perp - c.perp2 - c.perp1) / total;
    Ok(e.clamp(-1.0, 1.0))
}

pub fn chsh_s(e_ab: f64, e_ab_prime: f64, e_a_prime_b: f64, e_a_prime_b_prime: f64) -> f64 {
    (e_ab - e_ab_prime + e_a_prime_b + e_a_prime_b_prime).abs()
}

/// S and its binomial standard error from the four combinations.
pub fn chsh_from_counts(c: &CorrelationCounts) -> Result<(f64, f64)> {
    let mut es = [0.0; 4];
    let mut var = 0.0;
    for k in 0..4 {
        es[k] = correlation_e(&c.settings[k])?;
        if c.events[k] == 0 {
            return Err(CertifyError::InsufficientData(format!(
                "no events for combination {k}"
            )));
        }
        var += (1.0 - es[k] * es[k]) / c.events[k] as f64;
    }
    Ok((chsh_s(es[0], es[1], es[2], es[3]), var.sqrt()))
}

pub fn g2_cross(n_a: u64, n_b: u64, n_coinc: u64, duration_ps: u64, cfg: &CoincidenceConfig) -> Result<f64> {
    if n_a == 0 || n_b == 0 {
        return Err(CertifyError::InsufficientData(
            "g2 needs counts on both channels".into(),
        ));
    }
    if duration_ps == 0 {
        return Err(CertifyError::InsufficientData("g2 needs a positive duration".into()));
    }
    Ok(n_coinc as f64 * duration_ps as f64
        / (n_a as f64 * n_b as f64 * 2.0 * cfg.window_ps as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    /// Offset A of `A + B·cos(2(θ − φ))`.
    pub offset: f64,
    /// Amplitude B ≥ 0.
    pub amplitude: f64,
    /// Phase φ in degrees.
    pub phase_deg: f64,
    /// `B / A` clipped to `[0, 1]`.
    pub visibility: f64,
    /// `(max − min) / (max + min)` of the samples.
    pub raw_visibility: f64,
}

/// Least-squares fit of `A + B·cos(2(θ − φ))`; needs three distinct axes.
pub fn fit_fringe(samples: &[(f64, f64)]) -> Result<FringeFit> {
    // Linear in (A, c, s) with N = A + c·cos2θ + s·sin2θ.
    let mut m = [[0.0f64; 3]; 3];
    let mut rhs = [0.0f64; 3];
    for &(deg, n) in samples {
        let t = 2.0 * deg.to_radians();
        let row = [1.0, t.cos(), t.sin()];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += row[i] * row[j];
            }
            rhs[i] += row[i] * n;
        }
    }
    let [a, c, s] = solve3(m, rhs)
        .ok_or_else(|| CertifyError::Fit("fewer than three distinct analyzer axes".into()))?;
    if !(a > 0.0) {
        return Err(CertifyError::Fit(format!("non-positive fringe offset {a}")));
    }
    let amplitude = c.hypot(s);
    let max = samples.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let min = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let raw = if max + min > 0.0 { (max - min) / (max + min) } else { 0.0 };
    Ok(FringeFit {
        offset: a,
        amplitude,
        phase_deg: 0.5 * s.atan2(c).to_degrees(),
        visibility: (amplitude / a).clamp(0.0, 1.0),
        raw_visibility: raw,
    })
}

fn solve3(mut m: [[f64; 3]; 3], mut v: [f64; 3]) -> Option<[f64; 3]> {
    let scale = m.iter().flatten().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..3 {
        let piv = (col..3).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))?;
        if m[piv][col].abs() <= 1e-9 * scale {
            return None;
        }
        m.swap(col, piv);
        v.swap(col, piv);
        for r in 0..3 {
            if r != col {
                let f = m[r][col] / m[col][col];
                for k in col..3 {
                    m[r][k] -= f * m[col][k];
                }
                v[r] -= f * v[col];
            }
        }
    }
    Some([v[0] / m[0][0], v[1] / m[1][1], v[2] / m[2][2]])
}

/// Fringe visibility from an analyzer scan of at least eight angles
/// spanning at least 180°.
pub fn visibility(counts_vs_angle: &[(f64, f64)]) -> Result<FringeFit> {
    if counts_vs_angle.len() < 8 {
        return Err(CertifyError::InsufficientData(format!(
            "visibility needs at least 8 angles, got {}",
            counts_vs_angle.len()
        )));
    }
    let lo = counts_vs_angle.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let hi = counts_vs_angle.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 180.0 - 1e-9 {
        return Err(CertifyError::InsufficientData(format!(
            "visibility scan spans only {:.3} degrees",
            hi - lo
        )));
    }
    fit_fringe(counts_vs_angle)
}

/// Exposure-normalized coincidence rate (Hz) per schedule setting over
/// `[t0, t1)`, returned as `(C1 angle, rate)` pairs.
pub fn scan_rates(
    coincidences: &[CoincidenceEvent],
    schedule: &AnalyzerSchedule,
    t0: u64,
    t1: u64,
) -> Vec<(f64, f64)> {
    let mut counts = vec![0u64; schedule.len()];
    for c in coincidences.iter().filter(|c| c.time >= t0 && c.time < t1) {
        counts[schedule.index_at(c.time)] += 1;
    }
    schedule
        .settings()
        .iter()
        .enumerate()
        .filter_map(|(i, &(th1, _))| {
            let exposure = schedule.exposure(i, t0, t1);
            (exposure > 0).then(|| (th1, counts[i] as f64 * PS_PER_SECOND as f64 / exposure as f64))
        })
        .collect()
}

/// Certifier thresholds and block geometry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifierConfig {
    /// Certification events per block.
    pub block: usize,
    pub settings: ChshSettings,
    /// Required margin, in standard errors, of S above 2.
    pub sigma_margin: f64,
    pub g2_threshold: f64,
}

impl Default for CertifierConfig {
    fn default() -> Self {
        Self {
            block: DEFAULT_BLOCK,
            settings: ChshSettings::default(),
            sigma_margin: 3.0,
            g2_threshold: G2_CLASSICAL_BOUND,
        }
    }
}

impl CertifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block < MIN_BLOCK {
            return Err(CertifyError::Config(format!(
                "block must hold at least {MIN_BLOCK} events, got {}",
                self.block
            )));
        }
        if !(self.sigma_margin >= 0.0) || !(self.g2_threshold > 0.0) {
            return Err(CertifyError::Config("thresholds must be non-negative".into()));
        }
        Ok(())
    }

    pub fn verdict(&self, s: f64, s_stderr: f64, g2: f64, covered: bool) -> Verdict {
        if !covered {
            Verdict::Uncertified
        } else if s - self.sigma_margin * s_stderr > 2.0 {
            Verdict::CertifiedBell
        } else if g2 > self.g2_threshold {
            Verdict::CertifiedG2
        } else {
            Verdict::Uncertified
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertBlock {
    pub t_start: u64,
    pub t_end: u64,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "S_stderr")]
    pub s_stderr: f64,
    /// Fitted visibility keyed by the C2 analyzer angle.
    pub visibility: BTreeMap<String, f64>,
    pub g2: f64,
    pub n_cert_events: u64,
    /// Every CHSH combination had analyzer exposure in this block.
    pub coverage: bool,
    pub verdict: Verdict,
}

/// Inputs for [`live_certify`]: the C1–C2 coincidences plus the singles
/// needed for g².
#[derive(Clone, Copy, Debug)]
pub struct CertInput<'a> {
    pub coincidences: &'a [CoincidenceEvent],
    pub c1_times: &'a [u64],
    pub c2_times: &'a [u64],
    pub duration: u64,
    pub schedule: &'a AnalyzerSchedule,
    pub window: CoincidenceConfig,
}

/// Splits certification events into consecutive blocks and certifies each.
///
/// Blocks tile `[0, duration]`: a block ends where the next one's first
/// event lies, and a trailing remainder shorter than `block` joins the
/// previous block.
pub fn live_certify(input: &CertInput<'_>, cfg: &CertifierConfig) -> Result<Vec<CertBlock>> {
    cfg.validate()?;
    let ev = input.coincidences;
    if ev.is_empty() {
        return Ok(vec![certify_range(input, cfg, 0, input.duration, 0..0, true)]);
    }
    let n_blocks = (ev.len() / cfg.block).max(1);
    let blocks = (0..n_blocks)
        .into_par_iter()
        .map(|i| {
            let lo = i * cfg.block;
            let last = i + 1 == n_blocks;
            let hi = if last { ev.len() } else { lo + cfg.block };
            let t0 = if i == 0 { 0 } else { ev[lo].time };
            let t1 = if last { input.duration } else { ev[hi].time };
            certify_range(input, cfg, t0, t1, lo..hi, last)
        })
        .collect();
    Ok(blocks)
}

/// Correlation counts for events `range` normalized by analyzer exposure
/// over `[t0, t1)`; the flag reports full 16-combination coverage.
pub fn correlation_counts(
    events: &[CoincidenceEvent],
    schedule: &AnalyzerSchedule,
    settings: &ChshSettings,
    t0: u64,
    t1: u64,
) -> (CorrelationCounts, bool) {
    let slots: Vec<Option<(usize, usize)>> = schedule
        .settings()
        .iter()
        .map(|&(x, y)| settings.classify(x, y))
        .collect();
    let mut raw = [[0u64; 4]; 4];
    for e in events {
        if let Some((k, o)) = slots[schedule.index_at(e.time)] {
            raw[k][o] += 1;
        }
    }
    let mut exposure = [[0u64; 4]; 4];
    for (i, slot) in slots.iter().enumerate() {
        if let Some((k, o)) = *slot {
            exposure[k][o] += schedule.exposure(i, t0, t1);
        }
    }
    let covered = exposure.iter().flatten().all(|&e| e > 0);
    let mut out = CorrelationCounts::default();
    for k in 0..4 {
        for o in 0..4 {
            if exposure[k][o] > 0 {
                *out.settings[k].get_mut(o) =
                    raw[k][o] as f64 * PS_PER_SECOND as f64 / exposure[k][o] as f64;
            }
        }
        out.events[k] = raw[k].iter().sum();
    }
    (out, covered)
}

/// Fitted visibility per C2 analyzer angle of the CHSH schedule.
fn chsh_visibilities(c: &CorrelationCounts, settings: &ChshSettings) -> BTreeMap<String, f64> {
    let c1 = settings.c1_angles();
    let c2 = settings.c2_angles();
    let mut out = BTreeMap::new();
    for (j, &theta2) in c2.iter().enumerate() {
        let samples: Vec<(f64, f64)> = c1
            .iter()
            .enumerate()
            .map(|(i, &theta1)| {
                let combo = (i / 2) * 2 + j / 2;
                let outcome = match (i % 2, j % 2) {
                    (0, 0) => 0,
                    (1, 1) => 1,
                    (0, 1) => 2,
                    _ => 3,
                };
                let mut fc = c.settings[combo];
                (theta1, *fc.get_mut(outcome))
            })
            .collect();
        if let Ok(fit) = fit_fringe(&samples) {
            out.insert(format!("{theta2}"), fit.visibility);
        }
    }
    out
}

fn count_in(times: &[u64], t0: u64, t1: u64, inclusive_end: bool) -> u64 {
    let lo = times.partition_point(|&t| t < t0);
    let hi = if inclusive_end {
        times.partition_point(|&t| t <= t1)
    } else {
        times.partition_point(|&t| t < t1)
    };
    hi.saturating_sub(lo) as u64
}

fn certify_range(
    input: &CertInput<'_>,
    cfg: &CertifierConfig,
    t0: u64,
    t1: u64,
    range: std::ops::Range<usize>,
    last: bool,
) -> CertBlock {
    let events = &input.coincidences[range];
    let (counts, coverage) = correlation_counts(events, input.schedule, &cfg.settings, t0, t1);
    let (s, s_stderr) = chsh_from_counts(&counts).unwrap_or((0.0, 0.0));
    let n_a = count_in(input.c1_times, t0, t1, last);
    let n_b = count_in(input.c2_times, t0, t1, last);
    let g2 = g2_cross(n_a, n_b, events.len() as u64, t1 - t0, &input.window).unwrap_or(0.0);
    CertBlock {
        t_start: t0,
        t_end: t1,
        s,
        s_stderr,
        visibility: chsh_visibilities(&counts, &cfg.settings),
        g2,
        n_cert_events: events.len() as u64,
        coverage,
        verdict: cfg.verdict(s, s_stderr, g2, coverage && !events.is_empty()),
    }
}

/// Verdict of the block covering time `t`.
pub fn verdict_at(blocks: &[CertBlock], t: u64) -> Verdict {
    if blocks.is_empty() {
        return Verdict::Uncertified;
    }
    let i = blocks.partition_point(|b| b.t_start <= t);
    blocks[i.saturating_sub(1)].verdict
}

/// Run-level certification report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertReport {
    pub blocks: Vec<CertBlock>,
    /// S over all certification events of the run.
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "S_stderr")]
    pub s_stderr: f64,
    pub visibility: BTreeMap<String, f64>,
    pub g2: f64,
    pub g2_convention: String,
    pub n_cert_events: u64,
    /// The weakest block verdict.
    pub verdict: Verdict,
    pub blocks_by_verdict: BTreeMap<String, u64>,
}

pub fn certify_run(input: &CertInput<'_>, cfg: &CertifierConfig) -> Result<CertReport> {
    let blocks = live_certify(input, cfg)?;
    let (counts, covered) =
        correlation_counts(input.coincidences, input.schedule, &cfg.settings, 0, input.duration);
    let (s, s_stderr) = if covered {
        chsh_from_counts(&counts).unwrap_or((0.0, 0.0))
    } else {
        (0.0, 0.0)
    };
    let g2 = g2_cross(
        input.c1_times.len() as u64,
        input.c2_times.len() as u64,
        input.coincidences.len() as u64,
        input.duration,
        &input.window,
    )
    .unwrap_or(0.0);
    let verdict = blocks
        .iter()
        .map(|b| b.verdict)
        .min()
        .unwrap_or(Verdict::Uncertified);
    let mut by_verdict = BTreeMap::new();
    for b in &blocks {
        *by_verdict.entry(b.verdict.as_str().to_string()).or_insert(0) += 1;
    }
    Ok(CertReport {
        visibility: chsh_visibilities(&counts, &cfg.settings),
        s,
        s_stderr,
        g2,
        g2_convention: G2_CONVENTION.to_string(),
        n_cert_events: input.coincidences.len() as u64,
        verdict,
        blocks_by_verdict: by_verdict,
        blocks,
    })
}
