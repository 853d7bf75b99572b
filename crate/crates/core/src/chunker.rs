//! Boundary detection: turns an ordered run of entries into chunk spans.
//!
//! Two policies are supported. `Capacity` packs exactly `target_entries`
//! entries per span from the left. `Content` closes a span after an entry
//! when the mixed FNV-1a hash of the trailing window of keys (within the
//! current span) is divisible by `target_entries`, subject to the
//! `min_entries`/`max_entries` bounds. Because the content rule only looks at
//! keys inside the current span, the boundary state is fresh after every
//! close, which is what lets incremental re-chunking resynchronize.

use std::collections::VecDeque;
use std::hash::Hasher;
use std::ops::Range;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChunkingMode {
    Capacity,
    Content,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChunkingPolicy {
    pub mode: ChunkingMode,
    pub target_entries: usize,
    pub window_w: usize,
    pub min_entries: usize,
    pub max_entries: usize,
}

impl ChunkingPolicy {
    /// Content-defined policy with the default window and bounds
    /// (`min = target/4`, `max = 4*target`).
    pub fn content(target_entries: usize) -> Self {
        let target = target_entries.max(1);
        ChunkingPolicy {
            mode: ChunkingMode::Content,
            target_entries: target,
            window_w: DEFAULT_WINDOW,
            min_entries: (target / 4).max(1),
            max_entries: target * 4,
        }
    }

    pub fn capacity(target_entries: usize) -> Self {
        let target = target_entries.max(1);
        ChunkingPolicy {
            mode: ChunkingMode::Capacity,
            target_entries: target,
            window_w: DEFAULT_WINDOW,
            min_entries: target,
            max_entries: target,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_entries == 0 || self.window_w == 0 || self.min_entries == 0 {
            return Err(Error::InvalidInput(
                "chunking parameters must be positive".into(),
            ));
        }
        if self.mode == ChunkingMode::Content
            && !(self.min_entries <= self.target_entries && self.target_entries <= self.max_entries)
        {
            return Err(Error::InvalidInput(format!(
                "need min_entries <= target_entries <= max_entries, got {} / {} / {}",
                self.min_entries, self.target_entries, self.max_entries
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for ChunkingPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.mode {
            ChunkingMode::Capacity => write!(f, "capacity(target={})", self.target_entries),
            ChunkingMode::Content => write!(
                f,
                "content(target={}, w={}, min={}, max={})",
                self.target_entries, self.window_w, self.min_entries, self.max_entries
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Entry {
    pub key: Vec<u8>,
    pub value: Vec<u8>,
}

impl Entry {
    pub fn new(key: impl Into<Vec<u8>>, value: impl Into<Vec<u8>>) -> Self {
        Entry {
            key: key.into(),
            value: value.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkSpan {
    pub start_index: usize,
    pub end_index: usize,
}

impl ChunkSpan {
    pub fn len(&self) -> usize {
        self.end_index - self.start_index
    }

    pub fn is_empty(&self) -> bool {
        self.start_index == self.end_index
    }

    pub fn range(&self) -> Range<usize> {
        self.start_index..self.end_index
    }
}

/// 64-bit FNV-1a over the window's keys, each prefixed by its 4-byte
/// little-endian length.
pub fn rolling_hash<K: AsRef<[u8]>>(window: &[K]) -> u64 {
    let mut h = FnvHasher::default();
    for key in window {
        let key = key.as_ref();
        h.write(&(key.len() as u32).to_le_bytes());
        h.write(key);
    }
    h.finish()
}

/// Murmur3 64-bit finalizer. The low bits of an FNV-1a digest depend only on
/// the low bits of the input bytes, so the boundary test mixes the digest
/// before taking it modulo the target.
pub fn mix64(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^ (h >> 33)
}

/// Streaming form of the boundary rule. Feed keys in order; `push` reports
/// whether the current span closes after that key.
#[derive(Debug, Clone)]
pub struct SpanCutter {
    policy: ChunkingPolicy,
    len: usize,
    window: VecDeque<Vec<u8>>,
}

impl SpanCutter {
    pub fn new(policy: ChunkingPolicy) -> Self {
        SpanCutter {
            policy,
            len: 0,
            window: VecDeque::with_capacity(policy.window_w),
        }
    }

    /// Entries in the currently open span.
    pub fn open_len(&self) -> usize {
        self.len
    }

    pub fn push(&mut self, key: &[u8]) -> bool {
        self.len += 1;
        let close = match self.policy.mode {
            ChunkingMode::Capacity => self.len >= self.policy.target_entries,
            ChunkingMode::Content => {
                if self.window.len() == self.policy.window_w {
                    self.window.pop_front();
                }
                self.window.push_back(key.to_vec());
                if self.len >= self.policy.max_entries {
                    true
                } else if self.len >= self.policy.min_entries {
                    let (a, b) = self.window.as_slices();
                    let h = if b.is_empty() {
                        rolling_hash(a)
                    } else {
                        rolling_hash(&self.window.iter().collect::<Vec<_>>())
                    };
                    mix64(h).is_multiple_of(self.policy.target_entries as u64)
                } else {
                    false
                }
            }
        };
        if close {
            self.len = 0;
            self.window.clear();
        }
        close
    }
}

/// Splits strictly increasing keys into contiguous, non-empty spans.
pub fn boundaries_for_keys<K: AsRef<[u8]>>(
    keys: &[K],
    policy: &ChunkingPolicy,
) -> Result<Vec<ChunkSpan>> {
    policy.validate()?;
    for (i, pair) in keys.windows(2).enumerate() {
        if pair[0].as_ref() >= pair[1].as_ref() {
            return Err(Error::InvalidInput(format!(
                "keys not strictly increasing at position {}",
                i + 1
            )));
        }
    }
    let mut spans = Vec::new();
    let mut cutter = SpanCutter::new(*policy);
    let mut start = 0;
    for (i, key) in keys.iter().enumerate() {
        if cutter.push(key.as_ref()) {
            spans.push(ChunkSpan {
                start_index: start,
                end_index: i + 1,
            });
            start = i + 1;
        }
    }
    if start < keys.len() {
        spans.push(ChunkSpan {
            start_index: start,
            end_index: keys.len(),
        });
    }
    Ok(spans)
}

pub fn boundaries(entries: &[Entry], policy: &ChunkingPolicy) -> Result<Vec<ChunkSpan>> {
    let keys: Vec<&[u8]> = entries.iter().map(|e| e.key.as_slice()).collect();
    boundaries_for_keys(&keys, policy)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanStats {
    pub mean: f64,
    pub max: usize,
    pub count: usize,
}

pub fn span_stats(spans: &[ChunkSpan]) -> SpanStats {
    let total: usize = spans.iter().map(ChunkSpan::len).sum();
    SpanStats {
        mean: if spans.is_empty() {
            0.0
        } else {
            total as f64 / spans.len() as f64
        },
        max: spans.iter().map(ChunkSpan::len).max().unwrap_or(0),
        count: spans.len(),
    }
}

pub fn expected_span_stats(entries: &[Entry], policy: &ChunkingPolicy) -> Result<SpanStats> {
    Ok(span_stats(&boundaries(entries, policy)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::SplitMix64;
    use std::collections::HashMap;

    fn seq_entries(n: u64) -> Vec<Entry> {
        (0..n)
            .map(|i| Entry::new(i.to_be_bytes().to_vec(), b"v".to_vec()))
            .collect()
    }

    /// Textbook FNV-1a, kept separate from the `fnv` crate.
    fn fnv1a_reference(bytes: &[u8]) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in bytes {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }

    #[test]
    fn single_key_window_matches_reference_fnv() {
        let key = b"hello-key".to_vec();
        let mut framed = (key.len() as u32).to_le_bytes().to_vec();
        framed.extend_from_slice(&key);
        assert_eq!(rolling_hash(&[key]), fnv1a_reference(&framed));
        // published FNV-1a 64 test vector
        assert_eq!(fnv1a_reference(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn rolling_hash_is_deterministic_and_collision_free_on_corpus() {
        let mut rng = SplitMix64::seed_from_u64(7);
        let mut seen = HashMap::new();
        for _ in 0..10_000 {
            let w = rng.random_range(1..=4);
            let window: Vec<Vec<u8>> = (0..w)
                .map(|_| {
                    let len = rng.random_range(1..=12);
                    (0..len).map(|_| rng.random()).collect()
                })
                .collect();
            let h = rolling_hash(&window);
            assert_eq!(h, rolling_hash(&window));
            if let Some(prev) = seen.insert(h, window.clone()) {
                assert_eq!(prev, window, "hash collision");
            }
        }
    }

    #[test]
    fn one_byte_difference_changes_hash() {
        let a = vec![b"k1".to_vec(), b"k2".to_vec()];
        let b = vec![b"k1".to_vec(), b"k3".to_vec()];
        assert_ne!(rolling_hash(&a), rolling_hash(&b));
    }

    #[test]
    fn capacity_packs_from_left() {
        let spans = boundaries(&seq_entries(10), &ChunkingPolicy::capacity(4)).unwrap();
        let got: Vec<_> = spans.iter().map(|s| (s.start_index, s.end_index)).collect();
        assert_eq!(got, vec![(0, 4), (4, 8), (8, 10)]);
    }

    #[test]
    fn empty_input_gives_no_spans() {
        assert!(boundaries(&[], &ChunkingPolicy::content(64)).unwrap().is_empty());
    }

    #[test]
    fn rejects_non_increasing_keys() {
        let mut e = seq_entries(5);
        e.swap(1, 2);
        assert!(matches!(
            boundaries(&e, &ChunkingPolicy::content(8)),
            Err(Error::InvalidInput(_))
        ));
        let dup = vec![Entry::new(b"a".to_vec(), vec![]), Entry::new(b"a".to_vec(), vec![])];
        assert!(boundaries(&dup, &ChunkingPolicy::capacity(8)).is_err());
    }

    #[test]
    fn capacity_stats() {
        let s = expected_span_stats(&seq_entries(100), &ChunkingPolicy::capacity(10)).unwrap();
        assert_eq!(s.count, 10);
        assert_eq!(s.mean, 10.0);
        assert_eq!(s.max, 10);
    }

    #[test]
    fn content_spans_respect_bounds() {
        let p = ChunkingPolicy::content(64);
        let spans = boundaries(&seq_entries(20_000), &p).unwrap();
        for s in &spans[..spans.len() - 1] {
            assert!(s.len() >= p.min_entries && s.len() <= p.max_entries);
        }
    }

    #[test]
    fn capacity_insert_shifts_later_boundaries_by_one() {
        let p = ChunkingPolicy::capacity(7);
        let base: Vec<Entry> = (0..100u64)
            .map(|i| Entry::new((i * 2).to_be_bytes().to_vec(), vec![]))
            .collect();
        let before = boundaries(&base, &p).unwrap();
        let pos = 23;
        let mut edited = base.clone();
        edited.insert(pos, Entry::new((45u64).to_be_bytes().to_vec(), vec![]));
        let after = boundaries(&edited, &p).unwrap();
        // Boundary = key closing a span. Before p they are unchanged; from p on
        // each boundary moves one entry to the left in the original order.
        for (i, span) in before.iter().enumerate().take(before.len() - 1) {
            let old_key = &base[span.end_index - 1].key;
            let new_key = &edited[after[i].end_index - 1].key;
            if span.end_index <= pos {
                assert_eq!(new_key, old_key);
            } else {
                assert_eq!(new_key, &base[span.end_index - 2].key);
            }
        }
        assert_eq!(after.last().unwrap().end_index, 101);
    }

    #[test]
    fn validate_catches_bad_policies() {
        let mut p = ChunkingPolicy::content(16);
        p.min_entries = 32;
        assert!(p.validate().is_err());
        p = ChunkingPolicy::content(16);
        p.window_w = 0;
        assert!(p.validate().is_err());
        assert!(ChunkingPolicy::capacity(3).validate().is_ok());
    }
}
