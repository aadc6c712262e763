//! Python bindings: configuration, tag streams, bit sequences and the
//! pipeline stages. Reports come back as plain dicts.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;

use qrng_forge::extract::{self as ext, ExtractorParams};
use qrng_forge::pipeline::{self, PipelineError, RunConfig as CoreConfig, RunOptions};
use qrng_forge::stats;
use qrng_forge::{BitSequence, TagStream as CoreStream};

fn pipeline_err(e: PipelineError) -> PyErr {
    match e {
        PipelineError::Config(_) => PyValueError::new_err(e.to_string()),
        PipelineError::Io { .. } | PipelineError::Input { .. } => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(value_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Run configuration (the TOML schema of the command-line tool).
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct Config {
    inner: CoreConfig,
}

#[pymethods]
impl Config {
    #[new]
    #[pyo3(signature = (toml = None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(t) => CoreConfig::from_toml(t).map_err(PyValueError::new_err)?,
            None => CoreConfig::default(),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = pipeline::load_config(Some(&path), &Default::default()).map_err(pipeline_err)?;
        Ok(Self { inner })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(PyValueError::new_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.source.rng_seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.source.rng_seed = v;
    }

    #[getter]
    fn duration_s(&self) -> f64 {
        self.inner.source.duration_s
    }

    #[setter]
    fn set_duration_s(&mut self, v: f64) {
        self.inner.source.duration_s = v;
    }

    #[getter]
    fn pump_power_mw(&self) -> f64 {
        self.inner.source.pump_power_mw
    }

    #[setter]
    fn set_pump_power_mw(&mut self, v: f64) {
        self.inner.source.pump_power_mw = v;
    }

    #[getter]
    fn window_ns(&self) -> f64 {
        self.inner.coincidence.window_ns
    }

    #[setter]
    fn set_window_ns(&mut self, v: f64) {
        self.inner.coincidence.window_ns = v;
    }

    #[getter]
    fn output_dir(&self) -> PathBuf {
        self.inner.output_dir.clone()
    }

    #[setter]
    fn set_output_dir(&mut self, v: PathBuf) {
        self.inner.output_dir = v;
    }

    /// Hex key for the Toeplitz seed; `None` draws one per run.
    #[getter]
    fn seed_key(&self) -> Option<String> {
        self.inner.extractor.seed_key.clone()
    }

    #[setter]
    fn set_seed_key(&mut self, v: Option<String>) {
        self.inner.extractor.seed_key = v;
    }

    /// Analytic singles and pair rates for the source section.
    fn expected_rates(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let src = self.inner.source_config().map_err(PyValueError::new_err)?;
        to_py(py, &qrng_forge::source::expected_rates(&src))
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(seed={}, duration_s={}, pump_power_mw={}, window_ns={})",
            self.inner.source.rng_seed,
            self.inner.source.duration_s,
            self.inner.source.pump_power_mw,
            self.inner.coincidence.window_ns
        )
    }
}

/// A time-ordered stream of detector tags.
#[pyclass(name = "TagStream", frozen)]
struct TagStream {
    inner: CoreStream,
}

#[pymethods]
impl TagStream {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: pipeline::read_tags(&path).map_err(pipeline_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        pipeline::write_tags(&path, &self.inner).map_err(pipeline_err)
    }

    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: qrng_forge::timetag::import_csv(text).map_err(value_err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn duration_ps(&self) -> u64 {
        self.inner.duration()
    }

    /// Tag counts in channel order U1, U2, D1, D2, C1, C2.
    fn channel_counts(&self) -> [u64; 6] {
        self.inner.channel_counts()
    }

    /// Timestamps (ps) and channel indices.
    fn to_lists(&self) -> (Vec<u64>, Vec<u8>) {
        self.inner
            .tags()
            .iter()
            .map(|t| (t.timestamp, t.channel.index() as u8))
            .unzip()
    }

    fn sha256(&self) -> String {
        pipeline::stream_digest(&self.inner)
    }
}

/// A packed bit sequence.
#[pyclass(name = "Bits", frozen)]
struct Bits {
    inner: BitSequence,
}

#[pymethods]
impl Bits {
    #[staticmethod]
    #[pyo3(signature = (data, length = None))]
    fn from_bytes(data: &[u8], length: Option<usize>) -> PyResult<Self> {
        let len = length.unwrap_or(data.len() * 8);
        Ok(Self {
            inner: BitSequence::from_packed_bytes(data, len).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn from_ascii01(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: BitSequence::from_ascii01(text).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: pipeline::read_bits(&path).map_err(pipeline_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        qrng_forge::bits::write_bit_file(&path, &self.inner).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_packed_bytes())
    }

    fn to_ascii01(&self) -> String {
        self.inner.to_ascii01()
    }

    fn count_ones(&self) -> u64 {
        self.inner.count_ones()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __getitem__(&self, i: isize) -> PyResult<bool> {
        let n = self.inner.len() as isize;
        let k = if i < 0 { i + n } else { i };
        if !(0..n).contains(&k) {
            return Err(pyo3::exceptions::PyIndexError::new_err("bit index out of range"));
        }
        Ok(self.inner.get(k as usize))
    }
}

/// Output of the coincidence stage.
#[pyclass(name = "Coincidences", frozen)]
struct Coincidences {
    inner: pipeline::Coincidences,
}

#[pymethods]
impl Coincidences {
    fn raw_bits(&self) -> Bits {
        Bits {
            inner: self.inner.raw.clone(),
        }
    }

    fn summary(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.summary)
    }

    /// Number of C1/C2 coincidences used for certification.
    fn n_cert_events(&self) -> usize {
        self.inner.cert_events.len()
    }
}

#[pyfunction]
fn simulate(py: Python<'_>, config: &Config) -> PyResult<TagStream> {
    let src = config.inner.source_config().map_err(PyValueError::new_err)?;
    let inner = py.detach(|| pipeline::simulate(&src)).map_err(pipeline_err)?;
    Ok(TagStream { inner })
}

#[pyfunction]
fn coincide(py: Python<'_>, stream: &TagStream, config: &Config) -> PyResult<Coincidences> {
    let cc = config.inner.coincidence_config().map_err(PyValueError::new_err)?;
    let inner = py.detach(|| pipeline::coincide(&stream.inner, &cc));
    Ok(Coincidences { inner })
}

/// CHSH S, visibilities, g2 and per-block verdicts.
#[pyfunction]
fn certify(py: Python<'_>, coincidences: &Coincidences, config: &Config) -> PyResult<Py<PyAny>> {
    let cfg = &config.inner;
    let schedule = cfg.schedule().map_err(PyValueError::new_err)?;
    let cc = cfg.coincidence_config().map_err(PyValueError::new_err)?;
    let cert = cfg.certifier_config().map_err(PyValueError::new_err)?;
    let report = py
        .detach(|| pipeline::certify_coincidences(&coincidences.inner, &schedule, cc, &cert))
        .map_err(pipeline_err)?;
    to_py(py, &report)
}

/// Min-entropy per bit of the raw bits.
#[pyfunction]
fn min_entropy(bits: &Bits) -> PyResult<f64> {
    Ok(ext::min_entropy(&bits.inner).map_err(value_err)?.h_min_per_bit)
}

/// Output length of a Toeplitz hash over `n` bits.
#[pyfunction]
#[pyo3(signature = (n, h_min, epsilon = ext::DEFAULT_EPSILON))]
fn output_length(n: usize, h_min: f64, epsilon: f64) -> PyResult<usize> {
    ext::output_length(n, h_min, epsilon).map_err(value_err)
}

/// `y = T·x` for the `m × n` Toeplitz matrix given by `seed` (`n + m − 1` bits).
#[pyfunction]
fn toeplitz(py: Python<'_>, x: &Bits, m: usize, seed: &Bits) -> PyResult<Bits> {
    let params = ExtractorParams::new(x.inner.len(), m, 1.0, seed.inner.clone()).map_err(value_err)?;
    let inner = py
        .detach(|| ext::toeplitz_extract(&x.inner, &params))
        .map_err(value_err)?;
    Ok(Bits { inner })
}

/// Extracts `raw` block by block with the config's extractor settings.
/// Returns the extracted bits and the ratio report.
#[pyfunction]
#[pyo3(signature = (raw, config, seconds = 0.0))]
fn extract(py: Python<'_>, raw: &Bits, config: &Config, seconds: f64) -> PyResult<(Bits, Py<PyAny>)> {
    let mut cfg = config.inner.clone();
    let (seed, _) = pipeline::resolve_seed(&mut cfg).map_err(pipeline_err)?;
    let (bits, report) = py
        .detach(|| pipeline::extract_bits(&raw.inner, &cfg, &seed, seconds))
        .map_err(pipeline_err)?;
    Ok((Bits { inner: bits }, to_py(py, &report)?))
}

/// Battery of randomness tests; `None` when fewer bits than one sequence.
#[pyfunction]
fn battery(py: Python<'_>, bits: &Bits, config: &Config) -> PyResult<Option<Py<PyAny>>> {
    let report = py
        .detach(|| pipeline::battery(&bits.inner, &config.inner))
        .map_err(pipeline_err)?;
    report.map(|r| to_py(py, &r)).transpose()
}

/// Balance and autocorrelation of a bit sequence.
#[pyfunction]
fn raw_quality(py: Python<'_>, bits: &Bits) -> PyResult<Py<PyAny>> {
    to_py(py, &pipeline::raw_quality(&bits.inner))
}

/// Acceptable pass-proportion range for `n` sequences.
#[pyfunction]
#[pyo3(signature = (n_sequences, significance = 0.01))]
fn proportion_range(n_sequences: usize, significance: f64) -> (f64, f64) {
    stats::proportion_range(n_sequences, significance)
}

/// Full pipeline into `config.output_dir`; returns the manifest.
#[pyfunction]
#[pyo3(signature = (config, force = false, keep_tags = false))]
fn run(py: Python<'_>, config: &Config, force: bool, keep_tags: bool) -> PyResult<Py<PyAny>> {
    let opts = RunOptions { force, keep_tags };
    let m = py
        .detach(|| pipeline::cmd_run(&config.inner, &opts))
        .map_err(pipeline_err)?;
    to_py(py, &m)
}

/// Re-runs the pipeline from a manifest.
#[pyfunction]
#[pyo3(signature = (manifest, out = None, force = false))]
fn rerun(py: Python<'_>, manifest: PathBuf, out: Option<PathBuf>, force: bool) -> PyResult<Py<PyAny>> {
    let opts = RunOptions { force, keep_tags: false };
    let m = py
        .detach(|| pipeline::cmd_rerun(&manifest, out.as_deref(), &opts))
        .map_err(pipeline_err)?;
    to_py(py, &m)
}

#[pymodule]
fn qrng_forge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Config>()?;
    m.add_class::<TagStream>()?;
    m.add_class::<Bits>()?;
    m.add_class::<Coincidences>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(coincide, m)?)?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(min_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(output_length, m)?)?;
    m.add_function(wrap_pyfunction!(toeplitz, m)?)?;
    m.add_function(wrap_pyfunction!(extract, m)?)?;
    m.add_function(wrap_pyfunction!(battery, m)?)?;
    m.add_function(wrap_pyfunction!(raw_quality, m)?)?;
    m.add_function(wrap_pyfunction!(proportion_range, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(rerun, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
