//! Monte-Carlo model of the three-section pair source.
//!
//! Pairs are emitted as a homogeneous Poisson process at
//! `pair_rate_coeff * pump_power`. Each pair lands in one of the section
//! pairs `(U1, D2)`, `(U2, D1)`, `(C1, C2)` with probability 1/3. The `C`
//! photons meet polarization analyzers whose angles follow an
//! [`AnalyzerSchedule`]; the joint transmit/block outcome is drawn from
//! [`projection_probability`] at the active setting. Surviving photons get
//! Gaussian timing jitter, dark counts are added per channel, and an
//! optional non-paralyzable dead time is applied last.
//!
//! Multi-pair effects are not modelled explicitly. Independent pairs that
//! land within one coincidence window produce accidentals, and those grow
//! quadratically with rate while true coincidences grow linearly.
//!
//! Generation runs over fixed 10 ms slices. Each slice draws from its own
//! ChaCha8 stream (`rng_seed`, stream = slice index), so the output does not
//! depend on how many workers process the slices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timetag::{Channel, TagStream, TimeTag, TIMESTAMP_LIMIT};
use crate::PS_PER_SECOND;

/// Simulation slice length: 10 ms.
pub const SLICE_PS: u64 = 10_000_000_000;

/// Largest expected number of emitted pairs (or dark counts) per run.
pub const EVENT_BUDGET: f64 = (1u64 << 40) as f64;

pub const DEFAULT_JITTER_PS: f64 = 350.0;

#[derive(Debug, Error, PartialEq)]
pub enum SourceError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid source configuration: {0}")]
    Config(String),
    #[error("resource limit: {0}")]
    Resource(String),
}

pub type Result<T> = std::result::Result<T, SourceError>;

/// Polarization state `alpha|HH> - beta|VV>` mixed with white noise.
///
/// `noise_p` is the weight of the pure state (1 = pure); the remainder is
/// the maximally mixed two-qubit state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPhotonState {
    pub alpha: f64,
    pub beta: f64,
    pub noise_p: f64,
}

impl TwoPhotonState {
    pub fn new(alpha: f64, beta: f64, noise_p: f64) -> Result<Self> {
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if !in_unit(alpha) || !in_unit(beta) {
            return Err(SourceError::Domain(format!(
                "amplitudes must lie in [0, 1], got alpha={alpha}, beta={beta}"
            )));
        }
        if !in_unit(noise_p) {
            return Err(SourceError::Domain(format!(
                "noise_p must lie in [0, 1], got {noise_p}"
            )));
        }
        let norm = alpha * alpha + beta * beta;
        if (norm - 1.0).abs() > 1e-12 {
            return Err(SourceError::Domain(format!(
                "alpha^2 + beta^2 = {norm}, expected 1"
            )));
        }
        Ok(Self {
            alpha,
            beta,
            noise_p,
        })
    }

    /// `(|HH> - |VV>)/sqrt(2)`.
    pub fn bell() -> Self {
        Self {
            alpha: std::f64::consts::FRAC_1_SQRT_2,
            beta: std::f64::consts::FRAC_1_SQRT_2,
            noise_p: 1.0,
        }
    }

    /// State with the given `alpha` and `beta = sqrt(1 - alpha^2)`.
    pub fn from_alpha(alpha: f64, noise_p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(SourceError::Domain(format!(
                "alpha must lie in [0, 1], got {alpha}"
            )));
        }
        Self::new(alpha, (1.0 - alpha * alpha).max(0.0).sqrt(), noise_p)
    }

    pub fn with_noise(self, noise_p: f64) -> Result<Self> {
        Self::new(self.alpha, self.beta, noise_p)
    }
}

/// State produced by a pump half-wave plate at `theta_deg`:
/// `alpha = sin 2θ`, `beta = cos 2θ`.
pub fn state_from_hwp(theta_deg: f64) -> Result<TwoPhotonState> {
    if !(0.0..=45.0).contains(&theta_deg) {
        return Err(SourceError::Domain(format!(
            "half-wave plate angle must lie in [0, 45] degrees, got {theta_deg}"
        )));
    }
    let two_theta = (2.0 * theta_deg).to_radians();
    let (alpha, beta) = (two_theta.sin(), two_theta.cos());
    // Renormalize so the unit-norm invariant holds to the last ulp.
    let norm = (alpha * alpha + beta * beta).sqrt();
    Ok(TwoPhotonState {
        alpha: alpha / norm,
        beta: beta / norm,
        noise_p: 1.0,
    })
}

/// Probability that both photons pass analyzers set to `theta1_deg` and
/// `theta2_deg`.
pub fn projection_probability(state: &TwoPhotonState, theta1_deg: f64, theta2_deg: f64) -> f64 {
    let (s1, c1) = theta1_deg.to_radians().sin_cos();
    let (s2, c2) = theta2_deg.to_radians().sin_cos();
    let amp = state.alpha * c1 * c2 - state.beta * s1 * s2;
    state.noise_p * amp * amp + (1.0 - state.noise_p) / 4.0
}

/// Joint outcome probabilities `[TT, TB, BT, BB]` for photon 1 / photon 2
/// transmitted (T) or blocked (B). Blocking at θ is transmission at θ+90°.
pub fn joint_outcomes(state: &TwoPhotonState, theta1_deg: f64, theta2_deg: f64) -> [f64; 4] {
    [
        projection_probability(state, theta1_deg, theta2_deg),
        projection_probability(state, theta1_deg, theta2_deg + 90.0),
        projection_probability(state, theta1_deg + 90.0, theta2_deg),
        projection_probability(state, theta1_deg + 90.0, theta2_deg + 90.0),
    ]
}

/// Analyzer angles for `(C1, C2)`, cycled round-robin with a fixed dwell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyzerSchedule {
    settings: Vec<(f64, f64)>,
    dwell_ps: u64,
}

impl AnalyzerSchedule {
    pub fn new(settings: Vec<(f64, f64)>, dwell_ps: u64) -> Result<Self> {
        if settings.is_empty() {
            return Err(SourceError::Config("analyzer schedule is empty".into()));
        }
        if dwell_ps == 0 {
            return Err(SourceError::Config("analyzer dwell must be positive".into()));
        }
        if settings.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(SourceError::Config("analyzer angles must be finite".into()));
        }
        Ok(Self { settings, dwell_ps })
    }

    /// A single fixed setting.
    pub fn fixed(theta1: f64, theta2: f64) -> Self {
        Self {
            settings: vec![(theta1, theta2)],
            dwell_ps: SLICE_PS,
        }
    }

    /// The sixteen CHSH combinations: `C1 ∈ {a, a⊥, a', a'⊥}` crossed with
    /// `C2 ∈ {b, b⊥, b', b'⊥}`.
    pub fn chsh(a: f64, a_prime: f64, b: f64, b_prime: f64, dwell_ps: u64) -> Result<Self> {
        let c1 = [a, a + 90.0, a_prime, a_prime + 90.0];
        let c2 = [b, b + 90.0, b_prime, b_prime + 90.0];
        let settings = c1
            .iter()
            .flat_map(|&t1| c2.iter().map(move |&t2| (t1, t2)))
            .collect();
        Self::new(settings, dwell_ps)
    }

    /// Visibility scan: `C2` held at `c2_angle`, `C1` stepped through `n`
    /// angles from 0° to 180° inclusive.
    pub fn scan(c2_angle: f64, n: usize, dwell_ps: u64) -> Result<Self> {
        if n < 2 {
            return Err(SourceError::Config("a scan needs at least two angles".into()));
        }
        let step = 180.0 / (n - 1) as f64;
        Self::new(
            (0..n).map(|i| (i as f64 * step, c2_angle)).collect(),
            dwell_ps,
        )
    }

    pub fn settings(&self) -> &[(f64, f64)] {
        &self.settings
    }

    pub fn dwell_ps(&self) -> u64 {
        self.dwell_ps
    }

    pub fn len(&self) -> usize {
        self.settings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.settings.is_empty()
    }

    /// Index of the setting active at `t`.
    #[inline]
    pub fn index_at(&self, t: u64) -> usize {
        ((t / self.dwell_ps) % self.settings.len() as u64) as usize
    }

    /// Time spent in setting `index` over `[0, t)`.
    pub fn exposure_before(&self, index: usize, t: u64) -> u64 {
        let cycle = self.dwell_ps * self.settings.len() as u64;
        let full = (t / cycle) * self.dwell_ps;
        let rem = t % cycle;
        let slot_start = index as u64 * self.dwell_ps;
        full + rem.saturating_sub(slot_start).min(self.dwell_ps)
    }

    /// Time spent in setting `index` over `[t0, t1)`.
    pub fn exposure(&self, index: usize, t0: u64, t1: u64) -> u64 {
        self.exposure_before(index, t1) - self.exposure_before(index, t0.min(t1))
    }
}

/// Everything the simulator needs for one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    /// Pump power in mW.
    pub pump_power_mw: f64,
    /// Generated pairs per second per mW of pump.
    pub pair_rate_coeff: f64,
    pub state: TwoPhotonState,
    /// Detection efficiency per channel, indexed by [`Channel::index`].
    pub det_efficiency: [f64; 6],
    /// Dark-count rate per channel in counts/s.
    pub dark_rate_hz: [f64; 6],
    pub jitter_sigma_ps: f64,
    pub dead_time_ps: u64,
    pub duration_ps: u64,
    pub rng_seed: u64,
    pub schedule: AnalyzerSchedule,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            pump_power_mw: 12.4,
            pair_rate_coeff: 2.0e6,
            state: TwoPhotonState::bell(),
            det_efficiency: [0.3; 6],
            dark_rate_hz: [100.0; 6],
            jitter_sigma_ps: DEFAULT_JITTER_PS,
            dead_time_ps: 0,
            duration_ps: PS_PER_SECOND,
            rng_seed: 1,
            schedule: AnalyzerSchedule::chsh(0.0, 45.0, 67.5, 22.5, 1_000_000_000)
                .expect("default schedule is valid"),
        }
    }
}

impl SourceConfig {
    /// Total pair emission rate in pairs/s.
    pub fn pair_rate_hz(&self) -> f64 {
        self.pair_rate_coeff * self.pump_power_mw
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_ps as f64 / PS_PER_SECOND as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SourceError::Config(msg));
        if !(self.pump_power_mw.is_finite() && self.pump_power_mw > 0.0) {
            return bad(format!("pump power must be > 0 mW, got {}", self.pump_power_mw));
        }
        if !(self.pair_rate_coeff.is_finite() && self.pair_rate_coeff >= 0.0) {
            return bad(format!(
                "pair rate coefficient must be >= 0, got {}",
                self.pair_rate_coeff
            ));
        }
        TwoPhotonState::new(self.state.alpha, self.state.beta, self.state.noise_p)?;
        for c in Channel::ALL {
            let eta = self.det_efficiency[c.index()];
            if !(eta > 0.0 && eta <= 1.0) {
                return bad(format!("detection efficiency of {c} must lie in (0, 1], got {eta}"));
            }
            let dark = self.dark_rate_hz[c.index()];
            if !(dark.is_finite() && dark >= 0.0) {
                return bad(format!("dark rate of {c} must be >= 0, got {dark}"));
            }
        }
        if !(self.jitter_sigma_ps.is_finite() && self.jitter_sigma_ps >= 0.0) {
            return bad(format!("jitter must be >= 0 ps, got {}", self.jitter_sigma_ps));
        }
        if self.duration_ps >= TIMESTAMP_LIMIT {
            return bad("duration exceeds 2^63 ps".into());
        }
        let pairs = self.pair_rate_hz() * self.duration_s();
        if pairs >= EVENT_BUDGET {
            return Err(SourceError::Resource(format!(
                "{pairs:.3e} expected pairs exceeds the 2^40 event budget"
            )));
        }
        let darks: f64 = self.dark_rate_hz.iter().sum::<f64>() * self.duration_s();
        if darks >= EVENT_BUDGET {
            return Err(SourceError::Resource(format!(
                "{darks:.3e} expected dark counts exceeds the 2^40 event budget"
            )));
        }
        Ok(())
    }
}

/// Simulates one run, returning all six channels merged and sorted.
pub fn generate_events(config: &SourceConfig) -> Result<TagStream> {
    config.validate()?;
    let n_slices = config.duration_ps.div_ceil(SLICE_PS);
    let outcome_table: Vec<[f64; 4]> = config
        .schedule
        .settings()
        .iter()
        .map(|&(t1, t2)| cumulative(joint_outcomes(&config.state, t1, t2)))
        .collect();

    let slices: Vec<Vec<TimeTag>> = (0..n_slices)
        .into_par_iter()
        .map(|idx| simulate_slice(config, &outcome_table, idx))
        .collect();

    let total = slices.iter().map(Vec::len).sum();
    let mut tags = Vec::with_capacity(total);
    for s in slices {
        tags.extend(s);
    }
    // Jitter moves a few tags across slice edges; the stable sort is close
    // to linear on this nearly sorted input and keeps slice order on ties.
    tags.sort_by_key(|t| t.timestamp);

    if config.dead_time_ps > 0 {
        apply_dead_time(&mut tags, config.dead_time_ps);
    }
    Ok(TagStream::from_sorted_unchecked(tags, config.duration_ps))
}

fn cumulative(p: [f64; 4]) -> [f64; 4] {
    [p[0], p[0] + p[1], p[0] + p[1] + p[2], 1.0]
}

fn simulate_slice(config: &SourceConfig, outcome_table: &[[f64; 4]], idx: u64) -> Vec<TimeTag> {
    let start = idx * SLICE_PS;
    let end = (start + SLICE_PS).min(config.duration_ps);
    let span = (end - start) as f64;
    let duration = config.duration_ps as i64;
    let eta = config.det_efficiency;
    let sigma = config.jitter_sigma_ps;

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    rng.set_stream(idx);

    let pair_rate_per_ps = config.pair_rate_hz() / PS_PER_SECOND as f64;
    let expected = pair_rate_per_ps * span * 2.0
        + config.dark_rate_hz.iter().sum::<f64>() * span / PS_PER_SECOND as f64;
    let mut tags = Vec::with_capacity((expected * 1.05) as usize + 16);

    let emit = |tags: &mut Vec<TimeTag>, ch: Channel, offset: f64, survive: f64, jitter: f64| {
        if survive >= eta[ch.index()] {
            return;
        }
        let t = start as i64 + (offset + sigma * jitter).round() as i64;
        if (0..=duration).contains(&t) {
            tags.push(TimeTag::new(t as u64, ch));
        }
    };

    if pair_rate_per_ps > 0.0 {
        let gap = Exp::new(pair_rate_per_ps).expect("positive rate");
        let mut offset = 0.0f64;
        loop {
            offset += gap.sample(&mut rng);
            if offset >= span {
                break;
            }
            // Fixed draw count per pair: runs that differ only in state or
            // efficiency parameters see the same random numbers.
            let u_route: f64 = rng.random();
            let u_outcome: f64 = rng.random();
            let survive1: f64 = rng.random();
            let survive2: f64 = rng.random();
            let jitter1: f64 = StandardNormal.sample(&mut rng);
            let jitter2: f64 = StandardNormal.sample(&mut rng);

            let (ch1, ch2, pass1, pass2) = match (u_route * 3.0) as u32 {
                0 => (Channel::U1, Channel::D2, true, true),
                1 => (Channel::U2, Channel::D1, true, true),
                _ => {
                    let emitted_at = start + offset as u64;
                    let cum = &outcome_table[config.schedule.index_at(emitted_at)];
                    let outcome = cum.iter().position(|&c| u_outcome < c).unwrap_or(3);
                    // outcome order: TT, TB, BT, BB
                    (Channel::C1, Channel::C2, outcome <= 1, outcome % 2 == 0)
                }
            };
            if pass1 {
                emit(&mut tags, ch1, offset, survive1, jitter1);
            }
            if pass2 {
                emit(&mut tags, ch2, offset, survive2, jitter2);
            }
        }
    }

    for ch in Channel::ALL {
        let rate = config.dark_rate_hz[ch.index()] / PS_PER_SECOND as f64;
        if rate <= 0.0 {
            continue;
        }
        let gap = Exp::new(rate).expect("positive rate");
        let mut offset = 0.0f64;
        loop {
            offset += gap.sample(&mut rng);
            if offset >= span {
                break;
            }
            tags.push(TimeTag::new(start + offset as u64, ch));
        }
    }

    tags.sort_by_key(|t| t.timestamp);
    tags
}

/// Drops tags arriving within `dead_time` of the previous kept tag on the
/// same channel.
fn apply_dead_time(tags: &mut Vec<TimeTag>, dead_time: u64) {
    let mut last: [Option<u64>; 6] = [None; 6];
    tags.retain(|t| {
        let slot = &mut last[t.channel.index()];
        match *slot {
            Some(prev) if t.timestamp - prev < dead_time => false,
            _ => {
                *slot = Some(t.timestamp);
                true
            }
        }
    });
}

/// Analytic rates for a configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectedRates {
    /// Singles per channel in counts/s.
    pub singles_hz: [f64; 6],
    /// True coincidences per section pair, in [`Channel::SECTION_PAIRS`]
    /// order. Timing jitter and window losses are not included.
    pub pair_coincidence_hz: [f64; 3],
}

pub fn expected_rates(config: &SourceConfig) -> ExpectedRates {
    let per_section = config.pair_rate_hz() / 3.0;
    let eta = config.det_efficiency;
    let mut singles = [0.0; 6];
    for c in [Channel::U1, Channel::U2, Channel::D1, Channel::D2] {
        singles[c.index()] = per_section * eta[c.index()];
    }

    let n = config.schedule.len() as f64;
    let (mut pass1, mut pass2, mut both) = (0.0, 0.0, 0.0);
    for &(t1, t2) in config.schedule.settings() {
        let [tt, tb, bt, _] = joint_outcomes(&config.state, t1, t2);
        pass1 += (tt + tb) / n;
        pass2 += (tt + bt) / n;
        both += tt / n;
    }
    singles[Channel::C1.index()] = per_section * eta[Channel::C1.index()] * pass1;
    singles[Channel::C2.index()] = per_section * eta[Channel::C2.index()] * pass2;
    for c in Channel::ALL {
        singles[c.index()] += config.dark_rate_hz[c.index()];
    }

    let pair = |a: Channel, b: Channel| per_section * eta[a.index()] * eta[b.index()];
    ExpectedRates {
        singles_hz: singles,
        pair_coincidence_hz: [
            pair(Channel::U1, Channel::D2),
            pair(Channel::U2, Channel::D1),
            pair(Channel::C1, Channel::C2) * both,
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hwp_states() {
        let s = state_from_hwp(22.5).unwrap();
        assert_abs_diff_eq!(s.alpha, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        assert_abs_diff_eq!(s.beta, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        assert_eq!(s.noise_p, 1.0);

        let vv = state_from_hwp(0.0).unwrap();
        assert_abs_diff_eq!(vv.alpha, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(vv.beta, 1.0, epsilon = 1e-15);

        let hh = state_from_hwp(45.0).unwrap();
        assert_abs_diff_eq!(hh.alpha, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(hh.beta, 0.0, epsilon = 1e-15);

        assert!(matches!(state_from_hwp(46.0), Err(SourceError::Domain(_))));
        assert!(matches!(state_from_hwp(-0.1), Err(SourceError::Domain(_))));
    }

    #[test]
    fn state_requires_unit_norm() {
        assert!(TwoPhotonState::new(0.6, 0.8, 1.0).is_ok());
        assert!(TwoPhotonState::new(0.6, 0.7, 1.0).is_err());
        assert!(TwoPhotonState::new(0.6, 0.8, 1.2).is_err());
    }

    #[test]
    fn projection_examples() {
        let bell = TwoPhotonState::bell();
        assert_abs_diff_eq!(projection_probability(&bell, 0.0, 0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(projection_probability(&bell, 45.0, 45.0), 0.0, epsilon = 1e-15);
        let noisy = bell.with_noise(0.8).unwrap();
        assert_abs_diff_eq!(projection_probability(&noisy, 45.0, 45.0), 0.05, epsilon = 1e-15);
    }

    #[test]
    fn schedule_exposure() {
        let s = AnalyzerSchedule::new(vec![(0.0, 0.0), (45.0, 0.0), (90.0, 0.0)], 10).unwrap();
        assert_eq!(s.index_at(0), 0);
        assert_eq!(s.index_at(29), 2);
        assert_eq!(s.index_at(30), 0);
        // [5, 47): slot0 gets 5..10 and 30..40, slot1 10..20 and 40..47
        assert_eq!(s.exposure(0, 5, 47), 15);
        assert_eq!(s.exposure(1, 5, 47), 17);
        assert_eq!(s.exposure(2, 5, 47), 10);
        assert!(AnalyzerSchedule::new(vec![], 10).is_err());
        assert!(AnalyzerSchedule::new(vec![(0.0, 0.0)], 0).is_err());
    }

    #[test]
    fn chsh_schedule_has_sixteen_settings() {
        let s = AnalyzerSchedule::chsh(0.0, 45.0, 67.5, 22.5, 100).unwrap();
        assert_eq!(s.len(), 16);
        assert_eq!(s.settings()[0], (0.0, 67.5));
        assert_eq!(s.settings()[15], (135.0, 112.5));
    }

    fn small_config() -> SourceConfig {
        SourceConfig {
            pump_power_mw: 1.0,
            pair_rate_coeff: 2.0e5,
            duration_ps: 25_000_000_000,
            ..SourceConfig::default()
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let cfg = small_config();
        let a = generate_events(&cfg).unwrap();
        let b = generate_events(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
    }

    #[test]
    fn output_is_sorted_and_bounded() {
        let cfg = small_config();
        let s = generate_events(&cfg).unwrap();
        assert!(TagStream::new(s.tags().to_vec(), s.duration()).is_ok());
    }

    #[test]
    fn zero_duration_is_empty() {
        let cfg = SourceConfig {
            duration_ps: 0,
            ..small_config()
        };
        assert!(generate_events(&cfg).unwrap().is_empty());
    }

    #[test]
    fn budget_is_enforced() {
        let cfg = SourceConfig {
            pair_rate_coeff: 1.0e12,
            pump_power_mw: 10.0,
            duration_ps: 1_000 * PS_PER_SECOND,
            ..SourceConfig::default()
        };
        assert!(matches!(generate_events(&cfg), Err(SourceError::Resource(_))));
    }

    #[test]
    fn dead_time_prunes_close_tags() {
        let mut tags = vec![
            TimeTag::new(0, Channel::U1),
            TimeTag::new(5, Channel::D1),
            TimeTag::new(10, Channel::U1),
            TimeTag::new(30, Channel::U1),
            TimeTag::new(45, Channel::U1),
        ];
        apply_dead_time(&mut tags, 20);
        let kept: Vec<u64> = tags.iter().map(|t| t.timestamp).collect();
        assert_eq!(kept, vec![0, 5, 30]);
    }

    #[test]
    fn expected_rate_examples() {
        let mut cfg = SourceConfig {
            pump_power_mw: 1.0,
            pair_rate_coeff: 3.0e6,
            det_efficiency: [1.0; 6],
            dark_rate_hz: [0.0; 6],
            schedule: AnalyzerSchedule::fixed(0.0, 0.0),
            ..SourceConfig::default()
        };
        let r = expected_rates(&cfg);
        assert_abs_diff_eq!(r.singles_hz[Channel::U1.index()], 1.0e6, epsilon = 1e-6);
        assert_abs_diff_eq!(r.pair_coincidence_hz[2], 0.5e6, epsilon = 1e-6);

        cfg.det_efficiency = [0.5; 6];
        let r = expected_rates(&cfg);
        assert_abs_diff_eq!(r.pair_coincidence_hz[0], 0.25e6, epsilon = 1e-6);
        assert_abs_diff_eq!(r.pair_coincidence_hz[2], 0.25e6 * 0.5, epsilon = 1e-6);
    }
}
