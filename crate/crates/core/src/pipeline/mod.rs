//! End-to-end orchestration: simulate → coincide → certify → extract →
//! test, with run manifests for reproducibility.
//!
//! Exit codes: 0 success, 1 stage failure, 2 configuration error,
//! 3 I/O error, 4 extraction refused for an uncertified run.

pub mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::TryRngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bits::{read_bit_file, write_bit_file, BitSequence};
use crate::certify::{self, CertInput, CertReport, CertifierConfig, Verdict};
use crate::coincidence::{self, CoincidenceConfig, CoincidenceEvent, CoincidenceSummary, RawBitRecord};
use crate::extract::{self, RatioReport};
use crate::source::{self, expected_rates, AnalyzerSchedule, SourceConfig};
use crate::stats::{self, BatteryReport, ExportFormat, TestParams};
use crate::timetag::{Channel, TagStream};
use crate::PS_PER_SECOND;

pub use config::{Overrides, RunConfig};

pub const TOOL_NAME: &str = "qrng-forge";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "QRNG_FORGE_THREADS";
/// Lags checked by the raw-bit autocorrelation.
pub const AUTOCORR_LAGS: usize = 100;

pub const TAGS_FILE: &str = "tags.qtt";
pub const RAW_BITS_FILE: &str = "raw_bits.bin";
pub const EXTRACTED_FILE: &str = "extracted.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("unreadable input {path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("extraction refused: run verdict is UNCERTIFIED (use --force to extract anyway)")]
    Refused,
    #[error("stage {stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Io { .. } | PipelineError::Input { .. } => 3,
            PipelineError::Refused => 4,
            PipelineError::Stage { .. } => 1,
        }
    }

    fn stage(stage: &'static str, e: impl std::fmt::Display) -> Self {
        PipelineError::Stage {
            stage,
            message: e.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Applies `QRNG_FORGE_THREADS` to the global worker pool. Call once,
/// before any parallel work.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| PipelineError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    // A pool that already exists keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct HashWriter(Sha256);

impl Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Digest of a tag stream's canonical encoding.
pub fn stream_digest(stream: &TagStream) -> String {
    let mut w = HashWriter(Sha256::new());
    stream.write_to(&mut w).expect("hashing never fails");
    hex::encode(w.0.finalize())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_bits(path: &Path, bits: &BitSequence) -> Result<()> {
    write_bit_file(path, bits).map_err(io_err(path))
}

pub fn read_bits(path: &Path) -> Result<BitSequence> {
    read_bit_file(path).map_err(|e| match e {
        crate::bits::BitError::Io(source) => PipelineError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => PipelineError::Input {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

pub fn read_tags(path: &Path) -> Result<TagStream> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    TagStream::read_from(io::BufReader::new(file)).map_err(|e| match e {
        crate::timetag::TimeTagError::Io(source) => PipelineError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => PipelineError::Input {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

pub fn write_tags(path: &Path, stream: &TagStream) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = io::BufWriter::new(file);
    stream.write_to(&mut w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            config::ConfigLoadError::Io(source) => PipelineError::Io {
                path: p.to_path_buf(),
                source,
            },
            config::ConfigLoadError::Parse(m) => PipelineError::Config(format!("{}: {m}", p.display())),
        })?,
        None => RunConfig::default(),
    };
    cfg.apply(overrides);
    cfg.validate().map_err(PipelineError::Config)?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Stages

pub fn simulate(cfg: &SourceConfig) -> Result<TagStream> {
    source::generate_events(cfg).map_err(|e| PipelineError::stage("simulate", e))
}

/// Everything the coincidence stage derives from a tag stream.
#[derive(Clone, Debug)]
pub struct Coincidences {
    pub times: [Vec<u64>; 6],
    pub duration: u64,
    pub records: Vec<RawBitRecord>,
    pub cert_events: Vec<CoincidenceEvent>,
    pub raw: BitSequence,
    pub summary: CoincidenceSummary,
}

pub fn coincide(stream: &TagStream, cc: &CoincidenceConfig) -> Coincidences {
    coincide_times(stream.channel_times(), stream.duration(), cc)
}

pub fn coincide_times(times: [Vec<u64>; 6], duration: u64, cc: &CoincidenceConfig) -> Coincidences {
    let (records, cert_events) = rayon::join(
        || coincidence::raw_bits_from_times(&times, cc),
        || {
            coincidence::coincidences_between(
                &times[Channel::C1.index()],
                Channel::C1,
                &times[Channel::C2.index()],
                Channel::C2,
                cc,
            )
        },
    );
    let raw = coincidence::records_to_bits(&records);
    let summary = coincidence::summarize(&times, duration, cc, &records);
    Coincidences {
        times,
        duration,
        records,
        cert_events,
        raw,
        summary,
    }
}

pub fn certify_coincidences(
    c: &Coincidences,
    schedule: &AnalyzerSchedule,
    window: CoincidenceConfig,
    cfg: &CertifierConfig,
) -> Result<CertReport> {
    let input = CertInput {
        coincidences: &c.cert_events,
        c1_times: &c.times[Channel::C1.index()],
        c2_times: &c.times[Channel::C2.index()],
        duration: c.duration,
        schedule,
        window,
    };
    certify::certify_run(&input, cfg).map_err(|e| PipelineError::stage("certify", e))
}

/// Source of Toeplitz seed bits.
#[derive(Clone, Debug)]
pub enum SeedSource {
    Bits(BitSequence),
    Key([u8; 32]),
}

impl SeedSource {
    pub fn bits(&self, len: usize) -> BitSequence {
        match self {
            SeedSource::Bits(b) => b.slice(0, len.min(b.len())),
            SeedSource::Key(k) => extract::seed_from_key(*k, len),
        }
    }
}

/// Resolves the seed from the config, drawing a fresh OS-entropy key and
/// recording it in `cfg` when none is configured.
pub fn resolve_seed(cfg: &mut RunConfig) -> Result<(SeedSource, BTreeMap<String, String>)> {
    let mut inputs = BTreeMap::new();
    if let Some(path) = &cfg.extractor.seed_path {
        let bytes = fs::read(path).map_err(io_err(path))?;
        inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        let bits = BitSequence::from_packed_bytes(&bytes, bytes.len() * 8).expect("whole bytes");
        return Ok((SeedSource::Bits(bits), inputs));
    }
    let key = match &cfg.extractor.seed_key {
        Some(k) => config::parse_key(k).map_err(PipelineError::Config)?,
        None => {
            let mut key = [0u8; 32];
            rand::rngs::OsRng
                .try_fill_bytes(&mut key)
                .map_err(|e| PipelineError::stage("extract", format!("OS entropy unavailable: {e}")))?;
            cfg.extractor.seed_key = Some(hex::encode(key));
            key
        }
    };
    Ok((SeedSource::Key(key), inputs))
}

pub fn extract_bits(
    raw: &BitSequence,
    cfg: &RunConfig,
    seed: &SeedSource,
    seconds: f64,
) -> Result<(BitSequence, RatioReport)> {
    let n = cfg.extractor.n_block;
    let seed_bits = seed.bits(2 * n);
    extract::extract_stream(raw, cfg.extractor.epsilon, n, &seed_bits, seconds)
        .map_err(|e| PipelineError::stage("extract", e))
}

/// Raw-bit balance and autocorrelation figures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawQuality {
    pub n_bits: u64,
    pub p1: f64,
    pub max_abs_autocorr: Option<f64>,
    pub autocorr_bound: f64,
    pub autocorr: Vec<f64>,
}

pub fn raw_quality(bits: &BitSequence) -> RawQuality {
    let n = bits.len();
    let ac = stats::autocorr(bits, AUTOCORR_LAGS).unwrap_or_default();
    RawQuality {
        n_bits: n as u64,
        p1: if n > 0 { bits.count_ones() as f64 / n as f64 } else { 0.0 },
        max_abs_autocorr: ac.iter().map(|a| a.abs()).reduce(f64::max),
        autocorr_bound: if n > 0 { 4.0 / (n as f64).sqrt() } else { f64::INFINITY },
        autocorr: ac,
    }
}

/// Battery over as many full sequences as `bits` holds, up to the
/// configured count. `None` when not even one fits.
pub fn battery(bits: &BitSequence, cfg: &RunConfig) -> Result<Option<BatteryReport>> {
    let b = &cfg.battery;
    if b.n_sequences == 0 || b.seq_len == 0 {
        return Ok(None);
    }
    let n = b.n_sequences.min(bits.len() / b.seq_len);
    if n == 0 {
        return Ok(None);
    }
    stats::run_battery(bits, n, b.seq_len, b.significance, &TestParams::default())
        .map(Some)
        .map_err(|e| PipelineError::stage("test", e))
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificationSummary {
    pub verdict: Verdict,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "S_stderr")]
    pub s_stderr: f64,
    pub g2: f64,
    pub visibility: BTreeMap<String, f64>,
    pub n_cert_events: u64,
    pub blocks: usize,
    pub blocks_by_verdict: BTreeMap<String, u64>,
}

impl From<&CertReport> for CertificationSummary {
    fn from(r: &CertReport) -> Self {
        Self {
            verdict: r.verdict,
            s: r.s,
            s_stderr: r.s_stderr,
            g2: r.g2,
            visibility: r.visibility.clone(),
            n_cert_events: r.n_cert_events,
            blocks: r.blocks.len(),
            blocks_by_verdict: r.blocks_by_verdict.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BitRateSummary {
    pub duration_s: f64,
    pub raw_bits: u64,
    pub raw_rate_bps: f64,
    pub h_min: f64,
    pub h_min_worst_block: f64,
    pub n: usize,
    pub m: usize,
    pub ratio: f64,
    pub extracted_bits: u64,
    pub extracted_mbps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// Resolved configuration, including the extractor seed key.
    pub config: RunConfig,
    pub rng_seed: u64,
    /// Extraction ran despite an UNCERTIFIED verdict.
    pub forced: bool,
    /// False when the output bits are not backed by a certified run.
    pub certified_output: bool,
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of each output, keyed by file name.
    pub outputs: BTreeMap<String, String>,
    pub timing_s: BTreeMap<String, f64>,
    pub certification: CertificationSummary,
    pub bit_rate: BitRateSummary,
    pub raw_autocorr_max: Option<f64>,
    pub battery_pass: Option<bool>,
}

impl RunManifest {
    pub fn summary_line(&self) -> String {
        format!(
            "raw {:.4e} bit/s | extracted {:.4} Mbps | S {:.4} ± {:.4} | H_min {:.4} | g2 {:.2} | verdict {}{}",
            self.bit_rate.raw_rate_bps,
            self.bit_rate.extracted_mbps,
            self.certification.s,
            self.certification.s_stderr,
            self.bit_rate.h_min,
            self.certification.g2,
            self.certification.verdict,
            if self.forced { " (forced, output uncertified)" } else { "" }
        )
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    read_json(path)
}

// ---------------------------------------------------------------------------
// Commands

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Extract even when the run is UNCERTIFIED.
    pub force: bool,
    /// Also write the simulated tag file.
    pub keep_tags: bool,
}

fn timed<T>(timing: &mut BTreeMap<String, f64>, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let out = f()?;
    timing.insert(stage.to_string(), t.elapsed().as_secs_f64());
    Ok(out)
}

/// The full pipeline; writes every artifact and the manifest into
/// `cfg.output_dir`.
pub fn cmd_run(cfg: &RunConfig, opts: &RunOptions) -> Result<RunManifest> {
    let mut cfg = cfg.clone();
    cfg.validate().map_err(PipelineError::Config)?;
    let src = cfg.source_config().map_err(PipelineError::Config)?;
    let cc = cfg.coincidence_config().map_err(PipelineError::Config)?;
    let cert_cfg = cfg.certifier_config().map_err(PipelineError::Config)?;
    let (seed, inputs) = resolve_seed(&mut cfg)?;
    let dir = cfg.output_dir.clone();
    ensure_dir(&dir)?;

    let mut timing = BTreeMap::new();
    let mut outputs = BTreeMap::new();

    let stream = timed(&mut timing, "simulate", || simulate(&src))?;
    outputs.insert(TAGS_FILE.to_string(), stream_digest(&stream));
    if opts.keep_tags {
        write_tags(&dir.join(TAGS_FILE), &stream)?;
    }
    let duration = stream.duration();
    let times = stream.channel_times();
    drop(stream);

    let co = timed(&mut timing, "coincide", || Ok(coincide_times(times, duration, &cc)))?;
    write_bits(&dir.join(RAW_BITS_FILE), &co.raw)?;
    outputs.insert(RAW_BITS_FILE.into(), sha256_hex(&co.raw.to_packed_bytes()));
    write_json(&dir.join("coincidences.json"), &co.summary)?;

    let report = timed(&mut timing, "certify", || {
        certify_coincidences(&co, &src.schedule, cc, &cert_cfg)
    })?;
    write_json(&dir.join("certification.json"), &report)?;

    let forced = report.verdict == Verdict::Uncertified;
    if forced && !opts.force {
        return Err(PipelineError::Refused);
    }

    let seconds = src.duration_s();
    let quality = raw_quality(&co.raw);
    let (extracted, ratio) = timed(&mut timing, "extract", || extract_bits(&co.raw, &cfg, &seed, seconds))?;
    let entropy = extract::min_entropy(&co.raw).map_err(|e| PipelineError::stage("extract", e))?;
    write_bits(&dir.join(EXTRACTED_FILE), &extracted)?;
    outputs.insert(EXTRACTED_FILE.into(), sha256_hex(&extracted.to_packed_bytes()));
    write_json(&dir.join("extraction.json"), &ratio)?;
    write_json(&dir.join("raw_quality.json"), &quality)?;

    let battery = timed(&mut timing, "test", || battery(&extracted, &cfg))?;
    if let Some(b) = &battery {
        write_json(&dir.join("battery.json"), b)?;
    }

    let manifest = RunManifest {
        tool: TOOL_NAME.into(),
        version: VERSION.into(),
        rng_seed: src.rng_seed,
        forced,
        certified_output: !forced,
        inputs,
        outputs,
        timing_s: timing,
        certification: CertificationSummary::from(&report),
        bit_rate: BitRateSummary {
            duration_s: seconds,
            raw_bits: co.raw.len() as u64,
            raw_rate_bps: if seconds > 0.0 { co.raw.len() as f64 / seconds } else { 0.0 },
            h_min: ratio.h_min,
            h_min_worst_block: entropy.per_block_min,
            n: ratio.n,
            m: ratio.m,
            ratio: ratio.ratio,
            extracted_bits: ratio.bits_out,
            extracted_mbps: ratio.mbps,
        },
        raw_autocorr_max: quality.max_abs_autocorr,
        battery_pass: battery.as_ref().map(|b| b.pass),
        config: cfg,
    };
    fs::write(dir.join("config.toml"), manifest.config.to_toml()).map_err(io_err(&dir))?;
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Re-runs the pipeline from a manifest's recorded configuration.
pub fn cmd_rerun(manifest_path: &Path, out: Option<&Path>, opts: &RunOptions) -> Result<RunManifest> {
    let m = read_manifest(manifest_path)?;
    let mut cfg = m.config;
    if let Some(o) = out {
        cfg.output_dir = o.to_path_buf();
    }
    cmd_run(&cfg, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRate {
    pub channel: String,
    pub counts: u64,
    pub measured_hz: f64,
    pub expected_hz: f64,
    /// Poisson standard deviation of the measured rate.
    pub sigma_hz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub duration_s: f64,
    pub n_tags: u64,
    pub digest: String,
    pub channels: Vec<ChannelRate>,
}

impl SimulateReport {
    pub fn table(&self) -> String {
        let mut s = format!("{:<4} {:>12} {:>14} {:>14} {:>8}\n", "ch", "counts", "measured_hz", "expected_hz", "z");
        for c in &self.channels {
            let z = if c.sigma_hz > 0.0 { (c.measured_hz - c.expected_hz) / c.sigma_hz } else { 0.0 };
            let _ = writeln!(
                s,
                "{:<4} {:>12} {:>14.2} {:>14.2} {:>8.2}",
                c.channel, c.counts, c.measured_hz, c.expected_hz, z
            );
        }
        s
    }
}

/// Simulates a tag file into `cfg.output_dir` and reports per-channel
/// rates against the analytic expectation.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<SimulateReport> {
    let src = cfg.source_config().map_err(PipelineError::Config)?;
    ensure_dir(&cfg.output_dir)?;
    let stream = simulate(&src)?;
    write_tags(&cfg.output_dir.join(TAGS_FILE), &stream)?;
    let expected = expected_rates(&src);
    let secs = src.duration_s();
    let counts = stream.channel_counts();
    let channels = Channel::ALL
        .iter()
        .map(|&c| {
            let n = counts[c.index()];
            let exp = expected.singles_hz[c.index()];
            ChannelRate {
                channel: c.name().into(),
                counts: n,
                measured_hz: if secs > 0.0 { n as f64 / secs } else { 0.0 },
                expected_hz: exp,
                sigma_hz: if secs > 0.0 { (exp * secs).sqrt() / secs } else { 0.0 },
            }
        })
        .collect();
    let report = SimulateReport {
        duration_s: secs,
        n_tags: stream.len() as u64,
        digest: stream_digest(&stream),
        channels,
    };
    write_json(&cfg.output_dir.join("simulate.json"), &report)?;
    Ok(report)
}

/// Matches a tag file, writing raw bits and the coincidence summary.
pub fn cmd_coincide(input: &Path, cfg: &RunConfig) -> Result<CoincidenceSummary> {
    let cc = cfg.coincidence_config().map_err(PipelineError::Config)?;
    let stream = read_tags(input)?;
    let co = coincide(&stream, &cc);
    ensure_dir(&cfg.output_dir)?;
    write_bits(&cfg.output_dir.join(RAW_BITS_FILE), &co.raw)?;
    write_json(&cfg.output_dir.join("coincidences.json"), &co.summary)?;
    Ok(co.summary)
}

/// Certifies a tag file with the schedule and thresholds of `cfg`.
pub fn cmd_certify(input: &Path, cfg: &RunConfig) -> Result<CertReport> {
    let cc = cfg.coincidence_config().map_err(PipelineError::Config)?;
    let cert_cfg = cfg.certifier_config().map_err(PipelineError::Config)?;
    let schedule = cfg.schedule().map_err(PipelineError::Config)?;
    let stream = read_tags(input)?;
    let co = coincide(&stream, &cc);
    let report = certify_coincidences(&co, &schedule, cc, &cert_cfg)?;
    ensure_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("certification.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, Default)]
pub struct ExtractOptions {
    /// Acquisition time of the raw bits, for the bit-rate figure.
    pub seconds: f64,
    /// Certification report whose verdict gates extraction.
    pub certification: Option<PathBuf>,
    pub force: bool,
}

pub fn cmd_extract(input: &Path, cfg: &RunConfig, opts: &ExtractOptions) -> Result<RatioReport> {
    if let Some(path) = &opts.certification {
        let report: CertReport = read_json(path)?;
        if report.verdict == Verdict::Uncertified && !opts.force {
            return Err(PipelineError::Refused);
        }
    }
    let mut cfg = cfg.clone();
    let raw = read_bits(input)?;
    let (seed, _) = resolve_seed(&mut cfg)?;
    let (bits, ratio) = extract_bits(&raw, &cfg, &seed, opts.seconds)?;
    ensure_dir(&cfg.output_dir)?;
    write_bits(&cfg.output_dir.join(EXTRACTED_FILE), &bits)?;
    write_json(&cfg.output_dir.join("extraction.json"), &ratio)?;
    write_json(&cfg.output_dir.join("extraction_seed.json"), &cfg.extractor)?;
    Ok(ratio)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub quality: RawQuality,
    pub battery: Option<BatteryReport>,
}

pub fn cmd_test(input: &Path, cfg: &RunConfig) -> Result<TestReport> {
    let bits = read_bits(input)?;
    let battery = battery(&bits, cfg)?;
    let report = TestReport {
        quality: raw_quality(&bits),
        battery,
    };
    ensure_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("battery.json"), &report)?;
    Ok(report)
}

pub fn cmd_export(input: &Path, format: ExportFormat, output: &Path) -> Result<u64> {
    let bits = read_bits(input)?;
    let bytes = stats::export_bits(&bits, format);
    fs::write(output, &bytes).map_err(io_err(output))?;
    Ok(bytes.len() as u64)
}

// ---------------------------------------------------------------------------
// Sweeps

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    PumpPower,
    WindowTau,
    Alpha,
}

impl FromStr for SweepParam {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pump_power" => Ok(SweepParam::PumpPower),
            "window_tau" => Ok(SweepParam::WindowTau),
            "alpha" => Ok(SweepParam::Alpha),
            other => Err(PipelineError::Config(format!(
                "unknown sweep parameter {other:?} (pump_power, window_tau, alpha)"
            ))),
        }
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::PumpPower => "pump_power",
            SweepParam::WindowTau => "window_tau",
            SweepParam::Alpha => "alpha",
        }
    }

    fn apply(self, cfg: &mut RunConfig, value: f64) {
        match self {
            SweepParam::PumpPower => cfg.source.pump_power_mw = value,
            SweepParam::WindowTau => cfg.coincidence.window_ns = value,
            SweepParam::Alpha => {
                cfg.source.alpha = value;
                cfg.source.hwp_deg = None;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    #[serde(rename = "S")]
    pub s: Option<f64>,
    #[serde(rename = "S_stderr")]
    pub s_stderr: Option<f64>,
    #[serde(rename = "V")]
    pub v: Option<f64>,
    pub h_min: Option<f64>,
    pub mbps: Option<f64>,
    pub verdict: Option<Verdict>,
    pub error: Option<String>,
}

impl SweepRow {
    fn empty(value: f64) -> Self {
        Self {
            value,
            s: None,
            s_stderr: None,
            v: None,
            h_min: None,
            mbps: None,
            verdict: None,
            error: None,
        }
    }

    fn note(&mut self, e: impl std::fmt::Display) {
        let msg = e.to_string();
        self.error = Some(match self.error.take() {
            Some(prev) => format!("{prev}; {msg}"),
            None => msg,
        });
    }
}

/// A D-basis copy of `cfg`: `C2` at 45°, `C1` scanned over 0..=180°.
fn scan_config(cfg: &RunConfig) -> RunConfig {
    let mut scan = cfg.clone();
    scan.source.schedule.kind = config::ScheduleKind::Scan;
    scan.source.schedule.c2_angle = 45.0;
    scan.source.schedule.scan_points = scan.source.schedule.scan_points.max(8);
    scan
}

fn scan_visibility(times: &[Vec<u64>; 6], duration: u64, sched: &AnalyzerSchedule, cc: &CoincidenceConfig) -> Result<f64> {
    let ev = coincidence::coincidences_between(
        &times[Channel::C1.index()],
        Channel::C1,
        &times[Channel::C2.index()],
        Channel::C2,
        cc,
    );
    let samples = certify::scan_rates(&ev, sched, 0, duration);
    certify::visibility(&samples)
        .map(|f| f.visibility)
        .map_err(|e| PipelineError::stage("certify", e))
}

struct Simulated {
    times: [Vec<u64>; 6],
    duration: u64,
    schedule: AnalyzerSchedule,
}

fn simulate_times(cfg: &RunConfig) -> Result<Simulated> {
    let src = cfg.source_config().map_err(PipelineError::Config)?;
    let stream = simulate(&src)?;
    Ok(Simulated {
        duration: stream.duration(),
        times: stream.channel_times(),
        schedule: src.schedule,
    })
}

fn sweep_point(cfg: &RunConfig, main: &Simulated, scan: &Simulated, seed: &SeedSource, row: &mut SweepRow) {
    let cc = match cfg.coincidence_config() {
        Ok(c) => c,
        Err(e) => return row.note(e),
    };
    match scan_visibility(&scan.times, scan.duration, &scan.schedule, &cc) {
        Ok(v) => row.v = Some(v),
        Err(e) => row.note(e),
    }
    let co = coincide_times(main.times.clone(), main.duration, &cc);
    match cfg
        .certifier_config()
        .map_err(PipelineError::Config)
        .and_then(|cert| certify_coincidences(&co, &main.schedule, cc, &cert))
    {
        Ok(r) => {
            row.s = Some(r.s);
            row.s_stderr = Some(r.s_stderr);
            row.verdict = Some(r.verdict);
        }
        Err(e) => row.note(e),
    }
    match extract::min_entropy(&co.raw) {
        Ok(h) => row.h_min = Some(h.h_min_per_bit),
        Err(e) => row.note(e),
    }
    let seconds = main.duration as f64 / PS_PER_SECOND as f64;
    match extract_bits(&co.raw, cfg, seed, seconds) {
        Ok((_, ratio)) => row.mbps = Some(ratio.mbps),
        Err(e) => row.note(e),
    }
}

/// One pipeline per value. Failures are recorded in the row and the sweep
/// moves on. The V column comes from a separate D-basis scan run.
pub fn cmd_sweep(cfg: &RunConfig, param: SweepParam, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.len() < 2 {
        return Err(PipelineError::Config("a sweep needs at least two values".into()));
    }
    let mut cfg = cfg.clone();
    let (seed, _) = resolve_seed(&mut cfg)?;

    let mut rows = Vec::with_capacity(values.len());
    // A window sweep re-matches one simulated stream.
    let shared = if param == SweepParam::WindowTau {
        Some((simulate_times(&cfg)?, simulate_times(&scan_config(&cfg))?))
    } else {
        None
    };
    for &value in values {
        let mut row = SweepRow::empty(value);
        let mut point = cfg.clone();
        param.apply(&mut point, value);
        match &shared {
            Some((main, scan)) => sweep_point(&point, main, scan, &seed, &mut row),
            None => match simulate_times(&point).and_then(|m| Ok((m, simulate_times(&scan_config(&point))?))) {
                Ok((main, scan)) => sweep_point(&point, &main, &scan, &seed, &mut row),
                Err(e) => row.note(e),
            },
        }
        rows.push(row);
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn sweep_csv(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut out = format!("{},S,S_stderr,V,H_min,mbps,verdict,error\n", param.name());
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.value,
            opt(r.s),
            opt(r.s_stderr),
            opt(r.v),
            opt(r.h_min),
            opt(r.mbps),
            r.verdict.map(|v| v.as_str()).unwrap_or(""),
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
        );
    }
    out
}

pub fn sweep_table(param: SweepParam, rows: &[SweepRow]) -> String {
    let f = |v: Option<f64>, p: usize| v.map(|x| format!("{x:.p$}")).unwrap_or_else(|| "-".into());
    let mut out = format!(
        "{:>12} {:>8} {:>8} {:>8} {:>8}  {}\n",
        param.name(),
        "S",
        "V",
        "H_min",
        "Mbps",
        "verdict"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:>12} {:>8} {:>8} {:>8} {:>8}  {}",
            r.value,
            f(r.s, 4),
            f(r.v, 4),
            f(r.h_min, 4),
            f(r.mbps, 3),
            r.verdict.map(|v| v.as_str()).unwrap_or("-")
        );
    }
    out
}
