//! Run configuration file.
//!
//! The file is TOML: top-level `output_dir` plus one table per stage.
//! Every key is optional and falls back to its default.
//!
//! ```toml
//! output_dir = "run-out"
//!
//! [source]
//! pump_power_mw = 12.4
//! pair_rate_coeff = 2.0e6       # pairs/s per mW
//! alpha = 0.7071067811865476    # |HH> amplitude; beta = sqrt(1 - alpha^2)
//! # hwp_deg = 22.5              # alternative to alpha: alpha = sin 2θ
//! noise_p = 1.0
//! det_efficiency = 0.3          # one value, or six in U1,U2,D1,D2,C1,C2 order
//! dark_rate_hz = 100.0          # likewise
//! jitter_ps = 350.0
//! dead_time_ps = 0
//! duration_s = 1.0
//! # target_bit_pairs = 9e6      # sets duration_s from the expected bit rate
//! rng_seed = 1
//!
//! [source.schedule]
//! kind = "chsh"                 # chsh | scan | fixed
//! dwell_ps = 1000000000
//! scan_points = 19              # scan: C1 stepped over 0..=180 degrees
//! c2_angle = 45.0               # scan: fixed C2 angle
//! theta1 = 0.0                  # fixed
//! theta2 = 0.0                  # fixed
//!
//! [coincidence]
//! window_ns = 1.0
//!
//! [certifier]
//! block = 100000
//! a = 0.0
//! a_prime = 45.0
//! b = 67.5
//! b_prime = 22.5
//! sigma_margin = 3.0
//! g2_threshold = 2.0
//!
//! [extractor]
//! n_block = 1000000
//! epsilon = 8.881784197001252e-16   # 2^-50
//! # seed_path = "seed.bin"          # packed seed bits
//! # seed_key = "<64 hex digits>"    # ChaCha20 key expanded into the seed
//!
//! [battery]
//! n_sequences = 20
//! seq_len = 100000
//! significance = 0.01
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::certify::{CertifierConfig, ChshSettings};
use crate::coincidence::CoincidenceConfig;
use crate::extract::{DEFAULT_EPSILON, DEFAULT_N_BLOCK};
use crate::source::{
    expected_rates, state_from_hwp, AnalyzerSchedule, SourceConfig, TwoPhotonState, DEFAULT_JITTER_PS,
};
use crate::stats::DEFAULT_SIGNIFICANCE;
use crate::timetag::Channel;
use crate::PS_PER_SECOND;

/// Either one value for all six channels or one per channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerChannel {
    All(f64),
    Each([f64; 6]),
}

impl PerChannel {
    pub fn values(&self) -> [f64; 6] {
        match *self {
            PerChannel::All(v) => [v; 6],
            PerChannel::Each(v) => v,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Chsh,
    Scan,
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub kind: ScheduleKind,
    pub dwell_ps: u64,
    pub scan_points: usize,
    pub c2_angle: f64,
    pub theta1: f64,
    pub theta2: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Chsh,
            dwell_ps: 1_000_000_000,
            scan_points: 19,
            c2_angle: 45.0,
            theta1: 0.0,
            theta2: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSection {
    pub pump_power_mw: f64,
    pub pair_rate_coeff: f64,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hwp_deg: Option<f64>,
    pub noise_p: f64,
    pub det_efficiency: PerChannel,
    pub dark_rate_hz: PerChannel,
    pub jitter_ps: f64,
    pub dead_time_ps: u64,
    pub duration_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_bit_pairs: Option<f64>,
    pub rng_seed: u64,
    pub schedule: ScheduleSection,
}

impl Default for SourceSection {
    fn default() -> Self {
        Self {
            pump_power_mw: 12.4,
            pair_rate_coeff: 2.0e6,
            alpha: std::f64::consts::FRAC_1_SQRT_2,
            hwp_deg: None,
            noise_p: 1.0,
            det_efficiency: PerChannel::All(0.3),
            dark_rate_hz: PerChannel::All(100.0),
            jitter_ps: DEFAULT_JITTER_PS,
            dead_time_ps: 0,
            duration_s: 1.0,
            target_bit_pairs: None,
            rng_seed: 1,
            schedule: ScheduleSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoincidenceSection {
    pub window_ns: f64,
}

impl Default for CoincidenceSection {
    fn default() -> Self {
        Self { window_ns: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifierSection {
    pub block: usize,
    pub a: f64,
    pub a_prime: f64,
    pub b: f64,
    pub b_prime: f64,
    pub sigma_margin: f64,
    pub g2_threshold: f64,
}

impl Default for CertifierSection {
    fn default() -> Self {
        let c = CertifierConfig::default();
        Self {
            block: c.block,
            a: c.settings.a,
            a_prime: c.settings.a_prime,
            b: c.settings.b,
            b_prime: c.settings.b_prime,
            sigma_margin: c.sigma_margin,
            g2_threshold: c.g2_threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorSection {
    pub n_block: usize,
    pub epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed_key: Option<String>,
}

impl Default for ExtractorSection {
    fn default() -> Self {
        Self {
            n_block: DEFAULT_N_BLOCK,
            epsilon: DEFAULT_EPSILON,
            seed_path: None,
            seed_key: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatterySection {
    pub n_sequences: usize,
    pub seq_len: usize,
    pub significance: f64,
}

impl Default for BatterySection {
    fn default() -> Self {
        Self {
            n_sequences: 20,
            seq_len: 100_000,
            significance: DEFAULT_SIGNIFICANCE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub source: SourceSection,
    pub coincidence: CoincidenceSection,
    pub certifier: CertifierSection,
    pub extractor: ExtractorSection,
    pub battery: BatterySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("qrng-out"),
            source: SourceSection::default(),
            coincidence: CoincidenceSection::default(),
            certifier: CertifierSection::default(),
            extractor: ExtractorSection::default(),
            battery: BatterySection::default(),
        }
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub pump_power_mw: Option<f64>,
    pub window_ns: Option<f64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigLoadError> {
        let text = std::fs::read_to_string(path).map_err(ConfigLoadError::Io)?;
        Self::from_toml(&text).map_err(ConfigLoadError::Parse)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.source.rng_seed = s;
        }
        if let Some(p) = o.pump_power_mw {
            self.source.pump_power_mw = p;
        }
        if let Some(w) = o.window_ns {
            self.coincidence.window_ns = w;
        }
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
    }

    pub fn certifier_settings(&self) -> ChshSettings {
        ChshSettings {
            a: self.certifier.a,
            a_prime: self.certifier.a_prime,
            b: self.certifier.b,
            b_prime: self.certifier.b_prime,
        }
    }

    pub fn certifier_config(&self) -> Result<CertifierConfig, String> {
        let c = CertifierConfig {
            block: self.certifier.block,
            settings: self.certifier_settings(),
            sigma_margin: self.certifier.sigma_margin,
            g2_threshold: self.certifier.g2_threshold,
        };
        c.validate().map_err(|e| e.to_string())?;
        Ok(c)
    }

    pub fn coincidence_config(&self) -> Result<CoincidenceConfig, String> {
        let w = self.coincidence.window_ns;
        if !(w.is_finite() && w > 0.0) {
            return Err(format!("coincidence window must be positive, got {w} ns"));
        }
        CoincidenceConfig::from_ns(w).map_err(|e| e.to_string())
    }

    pub fn schedule(&self) -> Result<AnalyzerSchedule, String> {
        let s = &self.source.schedule;
        let sched = match s.kind {
            ScheduleKind::Chsh => self.certifier_settings().schedule(s.dwell_ps),
            ScheduleKind::Scan => AnalyzerSchedule::scan(s.c2_angle, s.scan_points, s.dwell_ps),
            ScheduleKind::Fixed => AnalyzerSchedule::new(vec![(s.theta1, s.theta2)], s.dwell_ps),
        };
        sched.map_err(|e| e.to_string())
    }

    /// The simulator configuration, with `target_bit_pairs` resolved into
    /// a duration.
    pub fn source_config(&self) -> Result<SourceConfig, String> {
        let s = &self.source;
        let state = match s.hwp_deg {
            Some(theta) => state_from_hwp(theta).and_then(|st| st.with_noise(s.noise_p)),
            None => TwoPhotonState::from_alpha(s.alpha, s.noise_p),
        }
        .map_err(|e| e.to_string())?;
        if !(s.duration_s.is_finite() && s.duration_s >= 0.0) {
            return Err(format!("duration must be >= 0 s, got {}", s.duration_s));
        }
        let mut cfg = SourceConfig {
            pump_power_mw: s.pump_power_mw,
            pair_rate_coeff: s.pair_rate_coeff,
            state,
            det_efficiency: s.det_efficiency.values(),
            dark_rate_hz: s.dark_rate_hz.values(),
            jitter_sigma_ps: s.jitter_ps,
            dead_time_ps: s.dead_time_ps,
            duration_ps: (s.duration_s * PS_PER_SECOND as f64).round() as u64,
            rng_seed: s.rng_seed,
            schedule: self.schedule()?,
        };
        if let Some(target) = s.target_bit_pairs {
            let rate = expected_bit_pair_rate(&cfg);
            if !(target > 0.0 && rate > 0.0) {
                return Err("target_bit_pairs needs a positive target and bit-pair rate".into());
            }
            cfg.duration_ps = (target / rate * PS_PER_SECOND as f64).ceil() as u64;
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    /// Checks every section without running anything.
    pub fn validate(&self) -> Result<(), String> {
        self.source_config()?;
        self.coincidence_config()?;
        self.certifier_config()?;
        let e = &self.extractor;
        if e.n_block == 0 {
            return Err("extractor n_block must be positive".into());
        }
        if !(e.epsilon > 0.0 && e.epsilon <= 1.0) {
            return Err(format!("extractor epsilon {} outside (0, 1]", e.epsilon));
        }
        if let Some(k) = &e.seed_key {
            parse_key(k)?;
        }
        let b = &self.battery;
        if !(b.significance > 0.0 && b.significance < 1.0) {
            return Err(format!("battery significance {} outside (0, 1)", b.significance));
        }
        if b.n_sequences > 0 && b.seq_len == 0 {
            return Err("battery seq_len must be positive".into());
        }
        Ok(())
    }
}

/// Expected rate of bit-carrying pairs, `(D1,U2)` plus `(D2,U1)`, in Hz.
pub fn expected_bit_pair_rate(cfg: &SourceConfig) -> f64 {
    let r = expected_rates(cfg);
    let _ = Channel::SECTION_PAIRS;
    r.pair_coincidence_hz[0] + r.pair_coincidence_hz[1]
}

pub fn parse_key(text: &str) -> Result<[u8; 32], String> {
    let bytes = hex::decode(text.trim()).map_err(|e| format!("seed_key: {e}"))?;
    bytes
        .try_into()
        .map_err(|_| "seed_key must be 64 hex digits".to_string())
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigLoadError {
    #[error(transparent)]
    Io(std::io::Error),
    #[error("{0}")]
    Parse(String),
}
