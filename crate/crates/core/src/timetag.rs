//! Detection events and the canonical `QTT1` time-tag file.
//!
//! Timestamps are integer picoseconds since the start of acquisition. A
//! [`TagStream`] is sorted by timestamp; equal timestamps on different
//! channels are legal and keep their insertion order.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "QTT1"
//! 4       2     version = 1
//! 6       2     channel count = 6
//! 8       8     duration (ps)
//! 16      8     record count
//! 24      9*N   records: timestamp u64, channel u8
//! ```

use std::fmt;
use std::io::{self, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"QTT1";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;
pub const RECORD_LEN: usize = 9;

/// Exclusive upper bound on timestamps, leaving headroom for signed
/// differences.
pub const TIMESTAMP_LIMIT: u64 = 1 << 63;

#[derive(Debug, Error)]
pub enum TimeTagError {
    #[error("format error: {0}")]
    Format(String),
    #[error("corrupt stream: {0}")]
    Corruption(String),
    #[error("truncated stream: {0}")]
    Truncated(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, TimeTagError>;

/// One of the six detector channels.
///
/// The discriminant is the on-disk channel byte.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Channel {
    U1 = 0,
    U2 = 1,
    D1 = 2,
    D2 = 3,
    C1 = 4,
    C2 = 5,
}

impl Channel {
    pub const ALL: [Channel; 6] = [
        Channel::U1,
        Channel::U2,
        Channel::D1,
        Channel::D2,
        Channel::C1,
        Channel::C2,
    ];

    /// The three diametrically opposite section pairs.
    pub const SECTION_PAIRS: [(Channel, Channel); 3] = [
        (Channel::U1, Channel::D2),
        (Channel::U2, Channel::D1),
        (Channel::C1, Channel::C2),
    ];

    /// The diametrically opposite section.
    pub fn partner(self) -> Channel {
        match self {
            Channel::U1 => Channel::D2,
            Channel::D2 => Channel::U1,
            Channel::U2 => Channel::D1,
            Channel::D1 => Channel::U2,
            Channel::C1 => Channel::C2,
            Channel::C2 => Channel::C1,
        }
    }

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(byte: u8) -> Option<Channel> {
        Channel::ALL.get(byte as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::U1 => "U1",
            Channel::U2 => "U2",
            Channel::D1 => "D1",
            Channel::D2 => "D2",
            Channel::C1 => "C1",
            Channel::C2 => "C2",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Channel::ALL
            .iter()
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown channel name {s:?}"))
    }
}

/// A single detection event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TimeTag {
    pub timestamp: u64,
    pub channel: Channel,
}

impl TimeTag {
    pub fn new(timestamp: u64, channel: Channel) -> Self {
        Self { timestamp, channel }
    }
}

/// A time-ordered sequence of detection events over `[0, duration]`.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct TagStream {
    tags: Vec<TimeTag>,
    duration: u64,
}

impl TagStream {
    /// Builds a stream, checking ordering and bounds.
    pub fn new(tags: Vec<TimeTag>, duration: u64) -> Result<Self> {
        if duration >= TIMESTAMP_LIMIT {
            return Err(TimeTagError::Config(format!(
                "duration {duration} ps exceeds 2^63"
            )));
        }
        let mut prev = 0u64;
        for (i, tag) in tags.iter().enumerate() {
            if tag.timestamp < prev {
                return Err(TimeTagError::Corruption(format!(
                    "tag {i} at {} ps precedes previous tag at {prev} ps",
                    tag.timestamp
                )));
            }
            if tag.timestamp > duration {
                return Err(TimeTagError::Corruption(format!(
                    "tag {i} at {} ps lies beyond duration {duration} ps",
                    tag.timestamp
                )));
            }
            prev = tag.timestamp;
        }
        Ok(Self { tags, duration })
    }

    /// Sorts `tags` by timestamp (stable) and builds the stream.
    pub fn from_unsorted(mut tags: Vec<TimeTag>, duration: u64) -> Result<Self> {
        tags.sort_by_key(|t| t.timestamp);
        Self::new(tags, duration)
    }

    pub fn empty(duration: u64) -> Self {
        Self {
            tags: Vec::new(),
            duration,
        }
    }

    pub(crate) fn from_sorted_unchecked(tags: Vec<TimeTag>, duration: u64) -> Self {
        debug_assert!(tags.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        Self { tags, duration }
    }

    pub fn tags(&self) -> &[TimeTag] {
        &self.tags
    }

    pub fn into_tags(self) -> Vec<TimeTag> {
        self.tags
    }

    pub fn duration(&self) -> u64 {
        self.duration
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Tags on one channel, as a stream of the same duration.
    pub fn filter_channel(&self, channel: Channel) -> TagStream {
        TagStream {
            tags: self
                .tags
                .iter()
                .filter(|t| t.channel == channel)
                .copied()
                .collect(),
            duration: self.duration,
        }
    }

    /// Timestamps split per channel, indexed by [`Channel::index`].
    pub fn channel_times(&self) -> [Vec<u64>; 6] {
        let mut counts = [0usize; 6];
        for t in &self.tags {
            counts[t.channel.index()] += 1;
        }
        let mut out: [Vec<u64>; 6] = std::array::from_fn(|i| Vec::with_capacity(counts[i]));
        for t in &self.tags {
            out[t.channel.index()].push(t.timestamp);
        }
        out
    }

    pub fn channel_counts(&self) -> [u64; 6] {
        let mut counts = [0u64; 6];
        for t in &self.tags {
            counts[t.channel.index()] += 1;
        }
        counts
    }

    /// Writes the `QTT1` encoding to `w`.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut header = [0u8; HEADER_LEN];
        header[0..4].copy_from_slice(MAGIC);
        header[4..6].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        header[6..8].copy_from_slice(&6u16.to_le_bytes());
        header[8..16].copy_from_slice(&self.duration.to_le_bytes());
        header[16..24].copy_from_slice(&(self.tags.len() as u64).to_le_bytes());
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(RECORD_LEN * 4096);
        for chunk in self.tags.chunks(4096) {
            buf.clear();
            for tag in chunk {
                buf.extend_from_slice(&tag.timestamp.to_le_bytes());
                buf.push(tag.channel as u8);
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    /// Reads a `QTT1` stream from `r`, validating every record.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        let got = read_full(&mut r, &mut header)?;
        if got < MAGIC.len() || &header[0..4] != MAGIC {
            return Err(TimeTagError::Format("bad magic, expected \"QTT1\"".into()));
        }
        if got < HEADER_LEN {
            return Err(TimeTagError::Truncated(format!(
                "header is {got} bytes, expected {HEADER_LEN}"
            )));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != FORMAT_VERSION {
            return Err(TimeTagError::Format(format!("unsupported version {version}")));
        }
        let channels = u16::from_le_bytes([header[6], header[7]]);
        if channels != 6 {
            return Err(TimeTagError::Format(format!(
                "channel count {channels}, expected 6"
            )));
        }
        let duration = u64::from_le_bytes(header[8..16].try_into().unwrap());
        let count = u64::from_le_bytes(header[16..24].try_into().unwrap());
        if duration >= TIMESTAMP_LIMIT {
            return Err(TimeTagError::Corruption(format!(
                "duration {duration} ps exceeds 2^63"
            )));
        }

        // Cap the up-front reservation so a corrupt count cannot OOM us.
        let mut tags = Vec::with_capacity(count.min(1 << 24) as usize);
        let mut buf = vec![0u8; RECORD_LEN * 4096];
        let mut remaining = count;
        let mut prev = 0u64;
        while remaining > 0 {
            let batch = remaining.min(4096) as usize;
            let want = batch * RECORD_LEN;
            let got = read_full(&mut r, &mut buf[..want])?;
            if got < want {
                let index = count - remaining + (got / RECORD_LEN) as u64;
                return Err(TimeTagError::Truncated(format!(
                    "record {index} of {count} is incomplete"
                )));
            }
            for rec in buf[..want].chunks_exact(RECORD_LEN) {
                let timestamp = u64::from_le_bytes(rec[0..8].try_into().unwrap());
                let channel = Channel::from_index(rec[8]).ok_or_else(|| {
                    TimeTagError::Corruption(format!("invalid channel byte {}", rec[8]))
                })?;
                if timestamp < prev {
                    return Err(TimeTagError::Corruption(format!(
                        "unsorted timestamps: {timestamp} after {prev}"
                    )));
                }
                if timestamp > duration {
                    return Err(TimeTagError::Corruption(format!(
                        "timestamp {timestamp} beyond duration {duration}"
                    )));
                }
                prev = timestamp;
                tags.push(TimeTag { timestamp, channel });
            }
            remaining -= batch as u64;
        }
        let mut extra = [0u8; 1];
        if read_full(&mut r, &mut extra)? != 0 {
            return Err(TimeTagError::Corruption(
                "trailing bytes after the last record".into(),
            ));
        }
        Ok(Self { tags, duration })
    }
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Canonical binary encoding of a stream.
pub fn encode_stream(stream: &TagStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.len());
    stream
        .write_to(&mut out)
        .expect("writing to a Vec cannot fail");
    out
}

pub fn decode_stream(bytes: &[u8]) -> Result<TagStream> {
    TagStream::read_from(bytes)
}

/// Merges sorted streams of equal duration.
///
/// Equal timestamps keep input order: earlier streams first, then position
/// within each stream.
pub fn merge_streams(streams: &[TagStream]) -> Result<TagStream> {
    let first = streams
        .first()
        .ok_or_else(|| TimeTagError::Config("no streams to merge".into()))?;
    let duration = first.duration;
    if let Some(bad) = streams.iter().find(|s| s.duration != duration) {
        return Err(TimeTagError::Config(format!(
            "mismatched durations: {} ps vs {} ps",
            duration, bad.duration
        )));
    }
    let total = streams.iter().map(TagStream::len).sum();
    let mut tags = Vec::with_capacity(total);
    for s in streams {
        tags.extend_from_slice(&s.tags);
    }
    // Stable sort over concatenated sorted runs is a k-way merge.
    tags.sort_by_key(|t| t.timestamp);
    Ok(TagStream { tags, duration })
}

/// Parses `timestamp_ps,channel_name` lines.
///
/// Blank lines and `#` comments are skipped, as is a leading header line
/// starting with `timestamp`. The duration is the largest timestamp seen.
pub fn import_csv(text: &str) -> Result<TagStream> {
    let mut tags = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if tags.is_empty() && line.to_ascii_lowercase().starts_with("timestamp") {
            continue;
        }
        let parse_err = |message: String| TimeTagError::Parse {
            line: i + 1,
            message,
        };
        let (ts, ch) = line
            .split_once(',')
            .ok_or_else(|| parse_err(format!("expected \"timestamp,channel\", got {line:?}")))?;
        let timestamp: u64 = ts
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("non-integer timestamp {:?}", ts.trim())))?;
        if timestamp >= TIMESTAMP_LIMIT {
            return Err(parse_err(format!("timestamp {timestamp} exceeds 2^63")));
        }
        let channel: Channel = ch.parse().map_err(parse_err)?;
        tags.push(TimeTag { timestamp, channel });
    }
    let duration = tags.iter().map(|t| t.timestamp).max().unwrap_or(0);
    TagStream::from_unsorted(tags, duration)
}
