//! Content-addressed chunk storage.
//!
//! Materialized chunks (leaf or interior) are keyed by
//! `SHA-256(0x00 || payload)`; virtual chunks by `SHA-256(0x01 || recipe)`.
//! Each chunk lives in its own file under `<root>/chunks/<2 hex>/<62 hex>`:
//!
//! ```text
//! "LDC1" | kind: u8 (0 leaf, 1 interior, 2 virtual) | len: u64 LE | payload
//! ```
//!
//! Chunks are never deleted. Materializing a virtual chunk stores the result
//! under its own content address and appends `old<TAB>new` to
//! `<root>/redirects`.

mod materialize;

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chunker::ChunkingPolicy;
use crate::error::{Error, Result};
use crate::relation::GroupShape;
use crate::schema_evolution::TransformOp;

pub const CHUNK_MAGIC: &[u8; 4] = b"LDC1";
const HEADER_LEN: usize = 13;
const NS_MATERIALIZED: u8 = 0x00;
const NS_VIRTUAL: u8 = 0x01;
const CACHE_LIMIT_BYTES: usize = 512 << 20;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChunkId(pub [u8; 32]);

impl ChunkId {
    /// Address of the zero-length leaf; used as the root of empty trees and
    /// never written to disk.
    pub const EMPTY: ChunkId = ChunkId(hex_literal_empty());

    pub fn for_payload(payload: &[u8]) -> ChunkId {
        Self::digest(NS_MATERIALIZED, payload)
    }

    pub fn for_recipe(recipe_bytes: &[u8]) -> ChunkId {
        Self::digest(NS_VIRTUAL, recipe_bytes)
    }

    fn digest(ns: u8, bytes: &[u8]) -> ChunkId {
        let mut h = Sha256::new();
        h.update([ns]);
        h.update(bytes);
        ChunkId(h.finalize().into())
    }

    pub fn is_empty_tree(&self) -> bool {
        *self == ChunkId::EMPTY
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<ChunkId> {
        let bytes = hex::decode(s).map_err(|e| Error::Parse(format!("bad chunk id {s:?}: {e}")))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::Parse(format!("chunk id {s:?} is not 32 bytes")))?;
        Ok(ChunkId(arr))
    }

    pub fn from_slice(bytes: &[u8]) -> Result<ChunkId> {
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::Decoding("chunk id is not 32 bytes".into()))?;
        Ok(ChunkId(arr))
    }
}

// SHA-256 of the single namespace byte 0x00.
const fn hex_literal_empty() -> [u8; 32] {
    [
        0x6e, 0x34, 0x0b, 0x9c, 0xff, 0xb3, 0x7a, 0x98, 0x9c, 0xa5, 0x44, 0xe6, 0xbb, 0x78, 0x0a,
        0x2c, 0x78, 0x90, 0x1d, 0x3f, 0xb3, 0x37, 0x38, 0x76, 0x85, 0x11, 0xa3, 0x06, 0x17, 0xaf,
        0xa0, 0x1d,
    ]
}

impl std::fmt::Display for ChunkId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl std::fmt::Debug for ChunkId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ChunkId({})", &self.to_hex()[..12])
    }
}

impl Serialize for ChunkId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ChunkId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ChunkId::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChunkKind {
    Leaf,
    Interior,
    Virtual,
}

impl ChunkKind {
    pub fn byte(self) -> u8 {
        match self {
            ChunkKind::Leaf => 0,
            ChunkKind::Interior => 1,
            ChunkKind::Virtual => 2,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(ChunkKind::Leaf),
            1 => Ok(ChunkKind::Interior),
            2 => Ok(ChunkKind::Virtual),
            other => Err(Error::Decoding(format!("unknown chunk kind byte {other}"))),
        }
    }
}

/// Pointers to source chunks plus the transformation that derives this
/// chunk from them. Sources are tree nodes; all sources of one recipe cover
/// the same key set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub transform: TransformOp,
    pub sources: Vec<ChunkId>,
    pub source_groups: Vec<GroupShape>,
    pub group: GroupShape,
    pub policy: ChunkingPolicy,
}

impl Recipe {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("recipe serialization is infallible")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Recipe> {
        serde_json::from_slice(bytes).map_err(|e| Error::Decoding(format!("recipe: {e}")))
    }
}

#[derive(Debug, Clone)]
pub struct StoredChunk {
    pub kind: ChunkKind,
    pub payload: Option<Arc<[u8]>>,
    pub recipe: Option<Recipe>,
}

impl StoredChunk {
    pub fn payload(&self) -> &[u8] {
        self.payload.as_deref().unwrap_or(&[])
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreStats {
    pub unique_chunks: u64,
    pub total_bytes: u64,
    pub virtual_chunks: u64,
}

#[derive(Debug, Clone, Copy)]
struct IndexEntry {
    kind: ChunkKind,
    len: u64,
}

#[derive(Debug, Default)]
struct Index {
    entries: HashMap<ChunkId, IndexEntry>,
    redirects: HashMap<ChunkId, ChunkId>,
    stats: StoreStats,
}

#[derive(Debug)]
enum Backend {
    Dir(PathBuf),
    Memory,
}

/// Thread-safe chunk store. Readers proceed concurrently; writes are
/// serialized through one writer lock.
#[derive(Debug)]
pub struct ChunkStore {
    backend: Backend,
    index: RwLock<Index>,
    cache: RwLock<HashMap<ChunkId, Arc<[u8]>>>,
    cache_bytes: AtomicUsize,
    writer: Mutex<()>,
    reads: AtomicU64,
}

fn encode_file(kind: ChunkKind, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(CHUNK_MAGIC);
    out.push(kind.byte());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

fn decode_file(bytes: &[u8]) -> Result<(ChunkKind, &[u8])> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != CHUNK_MAGIC {
        return Err(Error::Decoding("bad chunk file header".into()));
    }
    let kind = ChunkKind::from_byte(bytes[4])?;
    let len = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
    if bytes.len() != HEADER_LEN + len {
        return Err(Error::Decoding("chunk file length mismatch".into()));
    }
    Ok((kind, &bytes[HEADER_LEN..]))
}

impl ChunkStore {
    /// Opens (or creates) a store rooted at `root`, indexing existing chunks.
    pub fn open(root: impl AsRef<Path>) -> Result<ChunkStore> {
        let root = root.as_ref().to_path_buf();
        let chunks = root.join("chunks");
        fs::create_dir_all(&chunks).map_err(|e| Error::io(&chunks, e))?;
        let store = ChunkStore {
            backend: Backend::Dir(root.clone()),
            index: RwLock::new(Index::default()),
            cache: RwLock::new(HashMap::new()),
            cache_bytes: AtomicUsize::new(0),
            writer: Mutex::new(()),
            reads: AtomicU64::new(0),
        };
        {
            let mut index = store.index.write();
            for (id, kind, len) in scan_dir(&chunks)? {
                index.entries.insert(id, IndexEntry { kind, len });
            }
            let redirects = root.join("redirects");
            if redirects.exists() {
                let text = fs::read_to_string(&redirects).map_err(|e| Error::io(&redirects, e))?;
                for line in text.lines().filter(|l| !l.is_empty()) {
                    let (old, new) = line
                        .split_once('\t')
                        .ok_or_else(|| Error::Parse(format!("bad redirect line {line:?}")))?;
                    index
                        .redirects
                        .insert(ChunkId::from_hex(old)?, ChunkId::from_hex(new)?);
                }
            }
            index.stats = tally(&index.entries, &index.redirects);
        }
        Ok(store)
    }

    /// Volatile store with the same semantics, for tests and scratch work.
    pub fn in_memory() -> ChunkStore {
        ChunkStore {
            backend: Backend::Memory,
            index: RwLock::new(Index::default()),
            cache: RwLock::new(HashMap::new()),
            cache_bytes: AtomicUsize::new(0),
            writer: Mutex::new(()),
            reads: AtomicU64::new(0),
        }
    }

    pub fn root(&self) -> Option<&Path> {
        match &self.backend {
            Backend::Dir(p) => Some(p),
            Backend::Memory => None,
        }
    }

    fn chunk_path(&self, id: &ChunkId) -> Option<PathBuf> {
        match &self.backend {
            Backend::Dir(root) => {
                let h = id.to_hex();
                Some(root.join("chunks").join(&h[..2]).join(&h[2..]))
            }
            Backend::Memory => None,
        }
    }

    pub fn put(&self, payload: &[u8], kind: ChunkKind) -> Result<ChunkId> {
        if payload.is_empty() {
            return Err(Error::InvalidInput("chunk payload must be non-empty".into()));
        }
        if kind == ChunkKind::Virtual {
            return Err(Error::InvalidInput("use put_virtual for virtual chunks".into()));
        }
        let id = ChunkId::for_payload(payload);
        self.put_prehashed(id, kind, payload)?;
        Ok(id)
    }

    /// Stores a payload whose id the caller already computed with
    /// [`ChunkId::for_payload`].
    pub(crate) fn put_prehashed(&self, id: ChunkId, kind: ChunkKind, payload: &[u8]) -> Result<()> {
        debug_assert_eq!(id, ChunkId::for_payload(payload));
        if self.index.read().entries.contains_key(&id) {
            return Ok(());
        }
        let _w = self.writer.lock();
        if self.index.read().entries.contains_key(&id) {
            return Ok(());
        }
        self.write_chunk(&id, kind, payload)?;
        let mut index = self.index.write();
        index.entries.insert(
            id,
            IndexEntry {
                kind,
                len: payload.len() as u64,
            },
        );
        index.stats.unique_chunks += 1;
        index.stats.total_bytes += payload.len() as u64;
        drop(index);
        self.cache_insert(id, Arc::from(payload));
        Ok(())
    }

    fn write_chunk(&self, id: &ChunkId, kind: ChunkKind, payload: &[u8]) -> Result<()> {
        if let Some(path) = self.chunk_path(id) {
            let dir = path.parent().unwrap();
            fs::create_dir_all(dir).map_err(|e| Error::ChunkIo { id: *id, source: e })?;
            fs::write(&path, encode_file(kind, payload))
                .map_err(|e| Error::ChunkIo { id: *id, source: e })?;
        }
        Ok(())
    }

    fn cache_insert(&self, id: ChunkId, payload: Arc<[u8]>) {
        let len = payload.len();
        let mut cache = self.cache.write();
        if matches!(self.backend, Backend::Dir(_))
            && self.cache_bytes.load(Ordering::Relaxed) + len > CACHE_LIMIT_BYTES
        {
            cache.clear();
            self.cache_bytes.store(0, Ordering::Relaxed);
        }
        if cache.insert(id, payload).is_none() {
            self.cache_bytes.fetch_add(len, Ordering::Relaxed);
        }
    }

    pub fn put_virtual(&self, recipe: &Recipe) -> Result<ChunkId> {
        {
            let index = self.index.read();
            for src in &recipe.sources {
                if !src.is_empty_tree() && !index.entries.contains_key(src) {
                    return Err(Error::NotFound(format!("recipe source chunk {src}")));
                }
            }
        }
        let bytes = recipe.to_bytes();
        let id = ChunkId::for_recipe(&bytes);
        if self.reaches(&recipe.sources, id)? {
            return Err(Error::InvalidRecipe(format!("recipe for {id} is cyclic")));
        }
        if self.index.read().entries.contains_key(&id) {
            return Ok(id);
        }
        let _w = self.writer.lock();
        if self.index.read().entries.contains_key(&id) {
            return Ok(id);
        }
        self.write_chunk(&id, ChunkKind::Virtual, &bytes)?;
        let mut index = self.index.write();
        index.entries.insert(
            id,
            IndexEntry {
                kind: ChunkKind::Virtual,
                len: bytes.len() as u64,
            },
        );
        index.stats.virtual_chunks += 1;
        drop(index);
        self.cache_insert(id, Arc::from(bytes));
        Ok(id)
    }

    /// True when `target` is among `sources` or transitively among the
    /// sources of virtual chunks they name.
    fn reaches(&self, sources: &[ChunkId], target: ChunkId) -> Result<bool> {
        let mut stack: Vec<ChunkId> = sources.to_vec();
        let mut seen = std::collections::HashSet::new();
        while let Some(id) = stack.pop() {
            if id == target {
                return Ok(true);
            }
            if !seen.insert(id) {
                continue;
            }
            if self.kind_of(&id) == Some(ChunkKind::Virtual) {
                let raw = self.raw(&id)?;
                stack.extend(Recipe::from_bytes(&raw)?.sources);
            }
        }
        Ok(false)
    }

    pub fn contains(&self, id: &ChunkId) -> bool {
        self.index.read().entries.contains_key(id)
    }

    pub fn kind_of(&self, id: &ChunkId) -> Option<ChunkKind> {
        self.index.read().entries.get(id).map(|e| e.kind)
    }

    pub fn redirect_of(&self, id: &ChunkId) -> Option<ChunkId> {
        self.index.read().redirects.get(id).copied()
    }

    fn raw(&self, id: &ChunkId) -> Result<Arc<[u8]>> {
        if let Some(bytes) = self.cache.read().get(id) {
            return Ok(bytes.clone());
        }
        let path = self
            .chunk_path(id)
            .ok_or_else(|| Error::NotFound(format!("chunk {id}")))?;
        let file = fs::read(&path).map_err(|e| Error::ChunkIo { id: *id, source: e })?;
        let (_, payload) = decode_file(&file)?;
        let payload: Arc<[u8]> = Arc::from(payload);
        self.cache_insert(*id, payload.clone());
        Ok(payload)
    }

    /// Fetches a chunk. A virtual id that has been materialized resolves
    /// through the redirect table; otherwise its recipe is returned as is.
    pub fn get(&self, id: &ChunkId) -> Result<StoredChunk> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        let (kind, target) = {
            let index = self.index.read();
            let target = index.redirects.get(id).copied().unwrap_or(*id);
            let entry = index
                .entries
                .get(&target)
                .ok_or_else(|| Error::NotFound(format!("chunk {id}")))?;
            (entry.kind, target)
        };
        let raw = self.raw(&target)?;
        Ok(match kind {
            ChunkKind::Virtual => StoredChunk {
                kind,
                payload: None,
                recipe: Some(Recipe::from_bytes(&raw)?),
            },
            _ => StoredChunk {
                kind,
                payload: Some(raw),
                recipe: None,
            },
        })
    }

    pub(crate) fn record_redirect(&self, old: ChunkId, new: ChunkId) -> Result<()> {
        let _w = self.writer.lock();
        let mut index = self.index.write();
        if index.redirects.contains_key(&old) {
            return Ok(());
        }
        if let Backend::Dir(root) = &self.backend {
            let path = root.join("redirects");
            let mut f = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            writeln!(f, "{}\t{}", old.to_hex(), new.to_hex()).map_err(|e| Error::io(&path, e))?;
        }
        index.redirects.insert(old, new);
        index.stats.virtual_chunks = index.stats.virtual_chunks.saturating_sub(1);
        Ok(())
    }

    /// Current counters. `virtual_chunks` counts virtual chunks that have
    /// not been materialized yet.
    pub fn stats(&self) -> StoreStats {
        self.index.read().stats
    }

    /// Recounts from the backing storage, verifying every content address.
    pub fn rescan_stats(&self) -> Result<StoreStats> {
        match &self.backend {
            Backend::Memory => {
                let index = self.index.read();
                Ok(tally(&index.entries, &index.redirects))
            }
            Backend::Dir(root) => {
                let mut entries = HashMap::new();
                for (id, kind, len) in scan_dir(&root.join("chunks"))? {
                    entries.insert(id, IndexEntry { kind, len });
                }
                let paths: Vec<(ChunkId, PathBuf)> = entries
                    .keys()
                    .map(|id| (*id, self.chunk_path(id).unwrap()))
                    .collect();
                let bad: Vec<ChunkId> = crate::par::try_map(&paths, |(id, path)| {
                    let file = fs::read(path).map_err(|e| Error::ChunkIo { id: *id, source: e })?;
                    let (kind, payload) = decode_file(&file)?;
                    let actual = match kind {
                        ChunkKind::Virtual => ChunkId::for_recipe(payload),
                        _ => ChunkId::for_payload(payload),
                    };
                    Ok::<_, Error>((actual != *id).then_some(*id))
                })?
                .into_iter()
                .flatten()
                .collect();
                if let Some(id) = bad.first() {
                    return Err(Error::CorruptTree(format!(
                        "chunk {id} does not match its content address"
                    )));
                }
                let redirects = self.index.read().redirects.clone();
                Ok(tally(&entries, &redirects))
            }
        }
    }

    /// Number of `get` calls served so far.
    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn reset_reads(&self) {
        self.reads.store(0, Ordering::Relaxed);
    }

    /// Ids of all materialized chunks, unordered.
    pub fn materialized_ids(&self) -> Vec<ChunkId> {
        self.index
            .read()
            .entries
            .iter()
            .filter(|(_, e)| e.kind != ChunkKind::Virtual)
            .map(|(id, _)| *id)
            .collect()
    }

    /// Payload length of a materialized chunk.
    pub fn payload_len(&self, id: &ChunkId) -> Option<u64> {
        self.index.read().entries.get(id).map(|e| e.len)
    }
}

fn tally(entries: &HashMap<ChunkId, IndexEntry>, redirects: &HashMap<ChunkId, ChunkId>) -> StoreStats {
    let mut s = StoreStats::default();
    for (id, e) in entries {
        match e.kind {
            ChunkKind::Virtual => {
                if !redirects.contains_key(id) {
                    s.virtual_chunks += 1;
                }
            }
            _ => {
                s.unique_chunks += 1;
                s.total_bytes += e.len;
            }
        }
    }
    s
}

fn scan_dir(chunks: &Path) -> Result<Vec<(ChunkId, ChunkKind, u64)>> {
    let mut out = Vec::new();
    if !chunks.exists() {
        return Ok(out);
    }
    for entry in walkdir::WalkDir::new(chunks).min_depth(2).max_depth(2) {
        let entry = entry.map_err(|e| Error::io(chunks, e.into()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let prefix = entry
            .path()
            .parent()
            .and_then(|p| p.file_name())
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        let rest = entry.file_name().to_str().unwrap_or_default();
        let id = ChunkId::from_hex(&format!("{prefix}{rest}"))?;
        let mut header = [0u8; HEADER_LEN];
        let mut f = fs::File::open(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
        std::io::Read::read_exact(&mut f, &mut header).map_err(|e| Error::io(entry.path(), e))?;
        if &header[..4] != CHUNK_MAGIC {
            return Err(Error::Decoding(format!("bad magic in {}", entry.path().display())));
        }
        let kind = ChunkKind::from_byte(header[4])?;
        let len = u64::from_le_bytes(header[5..13].try_into().unwrap());
        out.push((id, kind, len));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_sentinel_is_hash_of_namespace_byte() {
        assert_eq!(ChunkId::for_payload(&[]), ChunkId::EMPTY);
    }

    #[test]
    fn digest_of_abc_leaf_matches_reference() {
        // sha256(b"\x00abc") from an independent implementation (Python hashlib)
        let expected = "609f6e36d2405585188d5cfd761f407c7cc46a7d3f314c88270469dde315fcd1";
        let store = ChunkStore::in_memory();
        let id = store.put(b"abc", ChunkKind::Leaf).unwrap();
        assert_eq!(id.to_hex(), expected);
    }

    #[test]
    fn dedup_and_distinct_ids() {
        let store = ChunkStore::in_memory();
        let a = store.put(b"payload-1", ChunkKind::Leaf).unwrap();
        let again = store.put(b"payload-1", ChunkKind::Leaf).unwrap();
        let b = store.put(b"payload-2", ChunkKind::Leaf).unwrap();
        assert_eq!(a, again);
        assert_ne!(a, b);
        assert_eq!(store.stats().unique_chunks, 2);
    }

    #[test]
    fn fresh_store_and_payload_accounting() {
        let store = ChunkStore::in_memory();
        assert_eq!(store.stats(), StoreStats::default());
        for i in 0..3u8 {
            store.put(&[i; 100], ChunkKind::Leaf).unwrap();
        }
        let s = store.stats();
        assert_eq!((s.unique_chunks, s.total_bytes, s.virtual_chunks), (3, 300, 0));
    }

    #[test]
    fn unknown_and_empty() {
        let store = ChunkStore::in_memory();
        assert!(matches!(store.get(&ChunkId([9; 32])), Err(Error::NotFound(_))));
        assert!(store.put(&[], ChunkKind::Leaf).is_err());
    }

    #[test]
    fn on_disk_layout_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let store = ChunkStore::open(dir.path()).unwrap();
        let id = store.put(b"abc", ChunkKind::Interior).unwrap();
        let hex = id.to_hex();
        let bytes = fs::read(dir.path().join("chunks").join(&hex[..2]).join(&hex[2..])).unwrap();
        let mut expected = b"LDC1".to_vec();
        expected.push(1);
        expected.extend_from_slice(&3u64.to_le_bytes());
        expected.extend_from_slice(b"abc");
        assert_eq!(bytes, expected);

        drop(store);
        let reopened = ChunkStore::open(dir.path()).unwrap();
        assert_eq!(reopened.stats().unique_chunks, 1);
        assert_eq!(reopened.get(&id).unwrap().payload(), b"abc");
        assert_eq!(reopened.rescan_stats().unwrap(), reopened.stats());
    }

    #[test]
    fn rescan_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let store = ChunkStore::open(dir.path()).unwrap();
        let id = store.put(b"original", ChunkKind::Leaf).unwrap();
        let hex = id.to_hex();
        let path = dir.path().join("chunks").join(&hex[..2]).join(&hex[2..]);
        fs::write(&path, encode_file(ChunkKind::Leaf, b"tampered")).unwrap();
        assert!(store.rescan_stats().is_err());
    }

    proptest! {
        #[test]
        fn round_trip_and_dedup(payloads in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 1..64), 1..20)) {
            let store = ChunkStore::in_memory();
            for p in &payloads {
                let id = store.put(p, ChunkKind::Leaf).unwrap();
                let before = store.stats();
                prop_assert_eq!(store.put(p, ChunkKind::Leaf).unwrap(), id);
                prop_assert_eq!(store.stats(), before);
                let got = store.get(&id).unwrap();
                prop_assert_eq!(got.payload(), p.as_slice());
                prop_assert_eq!(ChunkId::for_payload(store.get(&id).unwrap().payload()), id);
            }
            prop_assert_eq!(store.rescan_stats().unwrap(), store.stats());
        }
    }
}
