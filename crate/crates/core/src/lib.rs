//! Entangled-photon quantum random number generation pipeline.
//!
//! A three-section pair source is modelled as six detector channels
//! (`U1`, `U2`, `D1`, `D2`, `C1`, `C2`). Coincidences on `(D1, U2)` and
//! `(D2, U1)` carry raw bits; the `(C1, C2)` pair sits behind polarization
//! analyzers and feeds a live CHSH / g²(0) certifier. Raw bits are sized by
//! their min-entropy and distilled with a Toeplitz hash, then checked with
//! autocorrelation and a core subset of the SP 800-22 battery.
//!
//! Module map:
//!
//! - [`timetag`]: channels, time tags, the `QTT1` file format, CSV import
//! - [`bits`]: packed bit sequences and the bit-file format
//! - [`source`]: Monte-Carlo simulator of the pair source
//! - [`coincidence`]: window matching, count matrices, raw-bit assignment
//! - [`certify`]: visibility, CHSH `S`, g²(0) and block verdicts
//! - [`extract`]: min-entropy estimation and Toeplitz extraction
//! - [`gf2`]: Toeplitz matrix–vector products over GF(2)
//! - [`stats`]: autocorrelation and the statistical test battery
//! - [`pipeline`]: run configuration, manifests and CLI commands

pub mod bits;
pub mod certify;
pub mod coincidence;
pub mod extract;
pub mod gf2;
pub mod pipeline;
pub mod source;
pub mod stats;
pub mod timetag;

pub use bits::BitSequence;
pub use certify::{CertBlock, ChshSettings, Verdict};
pub use coincidence::{CoincidenceConfig, CoincidenceEvent, RawBitRecord};
pub use extract::{EntropyReport, ExtractorParams};
pub use source::{AnalyzerSchedule, SourceConfig, TwoPhotonState};
pub use timetag::{Channel, TagStream, TimeTag};

/// Picoseconds per second.
pub const PS_PER_SECOND: u64 = 1_000_000_000_000;
