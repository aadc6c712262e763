//! Coincidence matching between two channels.
//!
//! Two tags coincide when `|tA - tB| <= window`. Every tag joins at most one
//! coincidence. Tags are grouped into clusters separated by gaps wider than
//! the window (no coincidence can straddle such a gap). Inside a cluster the
//! matcher picks the matching with the most pairs and, among those, the
//! smallest total `|Δt|`, so each tag goes to its nearest available partner.
//! At realistic rates almost every cluster is a lone pair and the scan is a
//! single linear pass.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitSequence;
use crate::timetag::{Channel, TagStream};
use crate::PS_PER_SECOND;

/// Clusters with more candidate cells than this use the greedy fallback.
const EXACT_CLUSTER_CELLS: usize = 1 << 16;

#[derive(Debug, Error, PartialEq)]
pub enum CoincidenceError {
    #[error("coincidence window must be at least 1 ps, got {0}")]
    Window(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoincidenceConfig {
    /// Half-width τ of the closed window `|Δt| <= τ`, in ps.
    pub window_ps: u64,
}

impl CoincidenceConfig {
    pub fn new(window_ps: u64) -> Result<Self, CoincidenceError> {
        if window_ps == 0 {
            return Err(CoincidenceError::Window(window_ps));
        }
        Ok(Self { window_ps })
    }

    pub fn from_ns(window_ns: f64) -> Result<Self, CoincidenceError> {
        Self::new((window_ns * 1000.0).round().max(0.0) as u64)
    }

    pub fn window_s(&self) -> f64 {
        self.window_ps as f64 / PS_PER_SECOND as f64
    }
}

impl Default for CoincidenceConfig {
    fn default() -> Self {
        Self { window_ps: 1000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoincidenceEvent {
    /// The earlier of the two tags.
    pub time: u64,
    pub pair: (Channel, Channel),
    /// `t_second - t_first` for `pair = (first, second)`.
    pub delta: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawBitRecord {
    pub time: u64,
    pub bit: u8,
    pub source_pair: (Channel, Channel),
}

/// Matches sorted timestamp lists, calling `emit(i, j)` for every matched
/// `(a[i], b[j])` in time order.
pub fn match_times<F: FnMut(usize, usize)>(a: &[u64], b: &[u64], window: u64, mut emit: F) {
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut scratch = Vec::new();
    while i < na && j < nb {
        let (ai, bj) = (a[i], b[j]);
        if ai.saturating_add(window) < bj {
            i += 1;
            continue;
        }
        if bj.saturating_add(window) < ai {
            j += 1;
            continue;
        }

        // a[i] and b[j] are within the window: grow the cluster through
        // the merged order until a gap exceeds it.
        let (mut ie, mut je) = (i, j);
        let mut last = ai.min(bj);
        loop {
            let next = match (a.get(ie), b.get(je)) {
                (Some(&x), Some(&y)) if x <= y => (x, true),
                (Some(_), Some(&y)) => (y, false),
                (Some(&x), None) => (x, true),
                (None, Some(&y)) => (y, false),
                (None, None) => break,
            };
            if next.0 - last > window {
                break;
            }
            last = next.0;
            if next.1 {
                ie += 1;
            } else {
                je += 1;
            }
        }

        let (p, q) = (ie - i, je - j);
        if p == 1 && q == 1 {
            emit(i, j);
        } else if (p + 1) * (q + 1) <= EXACT_CLUSTER_CELLS {
            match_cluster_exact(&a[i..ie], &b[j..je], window, &mut scratch, |x, y| {
                emit(i + x, j + y)
            });
        } else {
            match_cluster_greedy(&a[i..ie], &b[j..je], window, |x, y| emit(i + x, j + y));
        }
        i = ie;
        j = je;
    }
}

#[derive(Clone, Copy, Default, PartialEq, Eq)]
struct Score {
    count: u32,
    cost: u64,
}

impl Score {
    #[inline]
    fn beats(self, other: Score) -> bool {
        self.count > other.count || (self.count == other.count && self.cost < other.cost)
    }
}

/// Maximum-cardinality, minimum-total-|Δt| matching of a small cluster.
///
/// An optimal matching never crosses (swapping crossed partners keeps both
/// pairs inside the window and does not raise the cost), so a prefix DP
/// over the two sorted lists is exact.
fn match_cluster_exact<F: FnMut(usize, usize)>(
    a: &[u64],
    b: &[u64],
    window: u64,
    dp: &mut Vec<Score>,
    mut emit: F,
) {
    let (p, q) = (a.len(), b.len());
    let w = q + 1;
    dp.clear();
    dp.resize((p + 1) * w, Score::default());
    for x in 1..=p {
        for y in 1..=q {
            let mut best = dp[(x - 1) * w + y];
            let left = dp[x * w + y - 1];
            if left.beats(best) {
                best = left;
            }
            let d = a[x - 1].abs_diff(b[y - 1]);
            if d <= window {
                let diag = dp[(x - 1) * w + y - 1];
                let cand = Score {
                    count: diag.count + 1,
                    cost: diag.cost + d,
                };
                if cand.beats(best) {
                    best = cand;
                }
            }
            dp[x * w + y] = best;
        }
    }

    let mut pairs = Vec::with_capacity(p.min(q));
    let (mut x, mut y) = (p, q);
    while x > 0 && y > 0 {
        let here = dp[x * w + y];
        let d = a[x - 1].abs_diff(b[y - 1]);
        let diag = dp[(x - 1) * w + y - 1];
        if d <= window && here.count == diag.count + 1 && here.cost == diag.cost + d {
            pairs.push((x - 1, y - 1));
            x -= 1;
            y -= 1;
        } else if here == dp[(x - 1) * w + y] {
            x -= 1;
        } else {
            y -= 1;
        }
    }
    for &(x, y) in pairs.iter().rev() {
        emit(x, y);
    }
}

/// Two-cursor nearest-partner matching, used only for oversized clusters.
fn match_cluster_greedy<F: FnMut(usize, usize)>(a: &[u64], b: &[u64], window: u64, mut emit: F) {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let (ai, bj) = (a[i], b[j]);
        if ai.saturating_add(window) < bj {
            i += 1;
        } else if bj.saturating_add(window) < ai {
            j += 1;
        } else if ai <= bj && a.get(i + 1).is_some_and(|&n| n <= bj) {
            // a later `a` sits between: it is closer to b[j]
            i += 1;
        } else if bj < ai && b.get(j + 1).is_some_and(|&n| n <= ai) {
            j += 1;
        } else {
            emit(i, j);
            i += 1;
            j += 1;
        }
    }
}

/// Number of coincidences between two sorted timestamp lists.
pub fn count_matches(a: &[u64], b: &[u64], window: u64) -> u64 {
    let mut n = 0;
    match_times(a, b, window, |_, _| n += 1);
    n
}

/// Coincidences between two single-channel timestamp lists.
pub fn coincidences_between(
    a: &[u64],
    channel_a: Channel,
    b: &[u64],
    channel_b: Channel,
    cfg: &CoincidenceConfig,
) -> Vec<CoincidenceEvent> {
    let mut out = Vec::new();
    match_times(a, b, cfg.window_ps, |i, j| {
        out.push(CoincidenceEvent {
            time: a[i].min(b[j]),
            pair: (channel_a, channel_b),
            delta: b[j] as i64 - a[i] as i64,
        })
    });
    out
}

/// Coincidences between the tags of `a` and the tags of `b`.
///
/// Each event's pair is `(channel of the a-tag, channel of the b-tag)`.
pub fn find_coincidences(a: &TagStream, b: &TagStream, cfg: &CoincidenceConfig) -> Vec<CoincidenceEvent> {
    let ta: Vec<u64> = a.tags().iter().map(|t| t.timestamp).collect();
    let tb: Vec<u64> = b.tags().iter().map(|t| t.timestamp).collect();
    let mut out = Vec::new();
    match_times(&ta, &tb, cfg.window_ps, |i, j| {
        out.push(CoincidenceEvent {
            time: ta[i].min(tb[j]),
            pair: (a.tags()[i].channel, b.tags()[j].channel),
            delta: tb[j] as i64 - ta[i] as i64,
        })
    });
    out
}

/// Symmetric 6×6 coincidence counts, indexed by [`Channel::index`].
pub type CountMatrix = [[u64; 6]; 6];

/// Coincidence counts for every unordered channel pair of a merged stream.
pub fn count_matrix(merged: &TagStream, cfg: &CoincidenceConfig) -> CountMatrix {
    count_matrix_from_times(&merged.channel_times(), cfg)
}

pub fn count_matrix_from_times(times: &[Vec<u64>; 6], cfg: &CoincidenceConfig) -> CountMatrix {
    let pairs: Vec<(usize, usize)> = (0..6)
        .flat_map(|x| (x + 1..6).map(move |y| (x, y)))
        .collect();
    let counts: Vec<u64> = pairs
        .par_iter()
        .map(|&(x, y)| count_matches(&times[x], &times[y], cfg.window_ps))
        .collect();
    let mut m = [[0u64; 6]; 6];
    for (&(x, y), &n) in pairs.iter().zip(&counts) {
        m[x][y] = n;
        m[y][x] = n;
    }
    m
}

/// Expected accidental rate `2τ·Ra·Rb` in Hz.
pub fn accidental_rate(rate_a_hz: f64, rate_b_hz: f64, cfg: &CoincidenceConfig) -> f64 {
    2.0 * cfg.window_s() * rate_a_hz * rate_b_hz
}

/// Bit carried by a channel pair: `(D1, U2) → 0`, `(D2, U1) → 1`.
pub fn bit_for_pair(pair: (Channel, Channel)) -> Option<u8> {
    use Channel::*;
    match pair {
        (D1, U2) | (U2, D1) => Some(0),
        (D2, U1) | (U1, D2) => Some(1),
        _ => None,
    }
}

/// Keeps bit-carrying coincidences in time order; a `(D1, U2)` event comes
/// before a `(D2, U1)` event at the same picosecond.
pub fn assign_bits(coincidences: &[CoincidenceEvent]) -> Vec<RawBitRecord> {
    let mut out: Vec<RawBitRecord> = coincidences
        .iter()
        .filter_map(|c| {
            bit_for_pair(c.pair).map(|bit| RawBitRecord {
                time: c.time,
                bit,
                source_pair: if bit == 0 {
                    (Channel::D1, Channel::U2)
                } else {
                    (Channel::D2, Channel::U1)
                },
            })
        })
        .collect();
    out.sort_by_key(|r| (r.time, r.bit));
    out
}

/// Raw bit records from per-channel timestamp lists.
pub fn raw_bits_from_times(times: &[Vec<u64>; 6], cfg: &CoincidenceConfig) -> Vec<RawBitRecord> {
    use Channel::*;
    let mut events = coincidences_between(&times[D1.index()], D1, &times[U2.index()], U2, cfg);
    events.extend(coincidences_between(
        &times[D2.index()],
        D2,
        &times[U1.index()],
        U1,
        cfg,
    ));
    assign_bits(&events)
}

pub fn records_to_bits(records: &[RawBitRecord]) -> BitSequence {
    records.iter().map(|r| r.bit == 1).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub pair: String,
    pub coincidences: u64,
    pub rate_hz: f64,
    pub accidental_hz: f64,
    /// Coincidence-to-accidental ratio.
    pub car: f64,
}

/// JSON summary written by the `coincide` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceSummary {
    pub window_ps: u64,
    pub duration_s: f64,
    pub singles_hz: BTreeMap<String, f64>,
    pub pairs: Vec<PairSummary>,
    pub raw_bits: u64,
    pub raw_ones: u64,
}

pub fn summarize(
    times: &[Vec<u64>; 6],
    duration_ps: u64,
    cfg: &CoincidenceConfig,
    records: &[RawBitRecord],
) -> CoincidenceSummary {
    let duration_s = duration_ps as f64 / PS_PER_SECOND as f64;
    let rate = |n: u64| if duration_s > 0.0 { n as f64 / duration_s } else { 0.0 };
    let singles: Vec<f64> = times.iter().map(|t| rate(t.len() as u64)).collect();
    let pairs = Channel::SECTION_PAIRS
        .iter()
        .map(|&(x, y)| {
            let n = count_matches(&times[x.index()], &times[y.index()], cfg.window_ps);
            let acc = accidental_rate(singles[x.index()], singles[y.index()], cfg);
            PairSummary {
                pair: format!("{x}-{y}"),
                coincidences: n,
                rate_hz: rate(n),
                accidental_hz: acc,
                car: if acc > 0.0 { rate(n) / acc } else { f64::INFINITY },
            }
        })
        .collect();
    CoincidenceSummary {
        window_ps: cfg.window_ps,
        duration_s,
        singles_hz: Channel::ALL
            .iter()
            .map(|c| (c.name().to_string(), singles[c.index()]))
            .collect(),
        pairs,
        raw_bits: records.len() as u64,
        raw_ones: records.iter().filter(|r| r.bit == 1).count() as u64,
    }
}
