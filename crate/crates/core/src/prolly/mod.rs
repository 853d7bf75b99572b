//! Canonical key-ordered tree over content-addressed chunks.
//!
//! Leaves hold entries; interior nodes hold `(max_key, child id, subtree
//! entry count)` triples. Every level is cut with the same
//! [`ChunkingPolicy`], applied to the level's keys (entry keys for leaves,
//! child max-keys above). Since boundaries depend only on keys, a tree is a
//! pure function of its entry set and policy, and [`apply`] is required to
//! produce exactly what [`build`] would.
//!
//! Interior payload layout:
//!
//! ```text
//! "LDI1" | level u8 (1 = parent of leaves) | n u32 |
//!   n x (key_len u32 | key | child id [32] | subtree count u64)
//! ```
//!
//! Raw leaves (used for untyped key/value trees) are
//! `"LDK1" | n u32 | n x (key_len u32 | key | value_len u32 | value)`;
//! typed leaves use the columnar layout from [`crate::relation`].

mod diff;
mod mutate;

pub use diff::{diff, Delta};
pub use mutate::{apply, Mutation, MutationOp};

use serde::{Deserialize, Serialize};

use crate::chunk_store::{ChunkId, ChunkKind, ChunkStore};
use crate::chunker::{boundaries_for_keys, ChunkingPolicy, Entry};
use crate::error::{Error, Result};
use crate::relation::{decode_chunk, encode_chunk, GroupShape, LEAF_MAGIC};

pub const INTERIOR_MAGIC: &[u8; 4] = b"LDI1";
pub const RAW_LEAF_MAGIC: &[u8; 4] = b"LDK1";

/// How leaf entries are laid out inside a chunk.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LeafFormat {
    Raw,
    Columnar(GroupShape),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeRef {
    pub root: ChunkId,
    pub height: u32,
    pub policy: ChunkingPolicy,
    pub entry_count: u64,
    pub format: LeafFormat,
}

impl TreeRef {
    pub fn empty(policy: ChunkingPolicy, format: LeafFormat) -> TreeRef {
        TreeRef {
            root: ChunkId::EMPTY,
            height: 0,
            policy,
            entry_count: 0,
            format,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.root.is_empty_tree()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct NodeRef {
    pub max_key: Vec<u8>,
    pub id: ChunkId,
    pub count: u64,
}

impl NodeRef {
    pub(crate) fn to_entry(&self) -> Entry {
        let mut value = Vec::with_capacity(40);
        value.extend_from_slice(&self.id.0);
        value.extend_from_slice(&self.count.to_le_bytes());
        Entry {
            key: self.max_key.clone(),
            value,
        }
    }

    pub(crate) fn from_entry(e: &Entry) -> Result<NodeRef> {
        if e.value.len() != 40 {
            return Err(Error::CorruptTree("interior entry value is not 40 bytes".into()));
        }
        Ok(NodeRef {
            max_key: e.key.clone(),
            id: ChunkId::from_slice(&e.value[..32])?,
            count: u64::from_le_bytes(e.value[32..].try_into().unwrap()),
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Node {
    Leaf(Vec<Entry>),
    Interior { level: u8, children: Vec<NodeRef> },
}

impl Node {
    pub(crate) fn level(&self) -> u8 {
        match self {
            Node::Leaf(_) => 0,
            Node::Interior { level, .. } => *level,
        }
    }

    pub(crate) fn max_key(&self) -> Option<&[u8]> {
        match self {
            Node::Leaf(e) => e.last().map(|e| e.key.as_slice()),
            Node::Interior { children, .. } => children.last().map(|c| c.max_key.as_slice()),
        }
    }

    pub(crate) fn count(&self) -> u64 {
        match self {
            Node::Leaf(e) => e.len() as u64,
            Node::Interior { children, .. } => children.iter().map(|c| c.count).sum(),
        }
    }

    /// Entries as seen by the chunker at this node's level.
    pub(crate) fn into_entries(self) -> Vec<Entry> {
        match self {
            Node::Leaf(e) => e,
            Node::Interior { children, .. } => children.iter().map(NodeRef::to_entry).collect(),
        }
    }
}

pub(crate) fn encode_leaf(format: &LeafFormat, entries: &[Entry]) -> Result<Vec<u8>> {
    match format {
        LeafFormat::Raw => {
            let mut out = Vec::new();
            out.extend_from_slice(RAW_LEAF_MAGIC);
            out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
            for e in entries {
                out.extend_from_slice(&(e.key.len() as u32).to_le_bytes());
                out.extend_from_slice(&e.key);
                out.extend_from_slice(&(e.value.len() as u32).to_le_bytes());
                out.extend_from_slice(&e.value);
            }
            Ok(out)
        }
        LeafFormat::Columnar(shape) => {
            let rows = entries
                .iter()
                .map(|e| shape.from_entry(e))
                .collect::<Result<Vec<_>>>()?;
            encode_chunk(shape, &rows)
        }
    }
}

pub(crate) fn encode_interior(level: u8, children: &[NodeRef]) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + children.len() * 56);
    out.extend_from_slice(INTERIOR_MAGIC);
    out.push(level);
    out.extend_from_slice(&(children.len() as u32).to_le_bytes());
    for c in children {
        out.extend_from_slice(&(c.max_key.len() as u32).to_le_bytes());
        out.extend_from_slice(&c.max_key);
        out.extend_from_slice(&c.id.0);
        out.extend_from_slice(&c.count.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Decoding("node truncated".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub(crate) fn decode_node(format: &LeafFormat, bytes: &[u8]) -> Result<Node> {
    let magic = bytes
        .get(..4)
        .ok_or_else(|| Error::Decoding("node shorter than its magic".into()))?;
    let node = if magic == INTERIOR_MAGIC {
        let mut c = Cursor { bytes, pos: 4 };
        let level = c.take(1)?[0];
        let n = c.u32()? as usize;
        let mut children = Vec::with_capacity(n);
        for _ in 0..n {
            let klen = c.u32()? as usize;
            let max_key = c.take(klen)?.to_vec();
            let id = ChunkId::from_slice(c.take(32)?)?;
            let count = u64::from_le_bytes(c.take(8)?.try_into().unwrap());
            children.push(NodeRef { max_key, id, count });
        }
        if c.pos != bytes.len() {
            return Err(Error::Decoding("trailing bytes in interior node".into()));
        }
        Node::Interior { level, children }
    } else if magic == RAW_LEAF_MAGIC {
        let mut c = Cursor { bytes, pos: 4 };
        let n = c.u32()? as usize;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let klen = c.u32()? as usize;
            let key = c.take(klen)?.to_vec();
            let vlen = c.u32()? as usize;
            let value = c.take(vlen)?.to_vec();
            entries.push(Entry { key, value });
        }
        if c.pos != bytes.len() {
            return Err(Error::Decoding("trailing bytes in leaf".into()));
        }
        Node::Leaf(entries)
    } else if magic == LEAF_MAGIC {
        let LeafFormat::Columnar(shape) = format else {
            return Err(Error::Decoding("columnar leaf in a raw tree".into()));
        };
        let rows = decode_chunk(bytes, shape)?;
        Node::Leaf(
            rows.iter()
                .map(|r| shape.to_entry(r))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        return Err(Error::Decoding(format!("unknown node magic {magic:?}")));
    };
    let keys_ok = match &node {
        Node::Leaf(e) => e.windows(2).all(|w| w[0].key < w[1].key),
        Node::Interior { children, .. } => children.windows(2).all(|w| w[0].max_key < w[1].max_key),
    };
    if !keys_ok {
        return Err(Error::CorruptTree("node keys are not strictly increasing".into()));
    }
    Ok(node)
}

/// Follows redirects and materializes virtual roots.
pub fn resolve(store: &ChunkStore, id: &ChunkId) -> Result<ChunkId> {
    if id.is_empty_tree() {
        return Ok(*id);
    }
    if let Some(new) = store.redirect_of(id) {
        return Ok(new);
    }
    match store.kind_of(id) {
        Some(ChunkKind::Virtual) => Ok(store.materialize(id)?.0),
        Some(_) => Ok(*id),
        None => Err(Error::NotFound(format!("tree node {id}"))),
    }
}

pub(crate) fn read_node(store: &ChunkStore, format: &LeafFormat, id: &ChunkId) -> Result<Node> {
    let chunk = store.get(id)?;
    if chunk.kind == ChunkKind::Virtual {
        let real = resolve(store, id)?;
        return read_node(store, format, &real);
    }
    decode_node(format, chunk.payload())
}

/// Where freshly encoded chunks go: the store, or nowhere (hash only).
pub(crate) enum Sink<'a> {
    Store(&'a ChunkStore),
    DryRun,
}

impl Sink<'_> {
    fn put(&self, kind: ChunkKind, id: ChunkId, payload: &[u8]) -> Result<()> {
        match self {
            Sink::Store(s) => s.put_prehashed(id, kind, payload),
            Sink::DryRun => Ok(()),
        }
    }
}

/// Encodes and hashes a batch of spans in parallel; returns refs in order.
pub(crate) fn emit_level(
    sink: &Sink<'_>,
    format: &LeafFormat,
    level: u8,
    spans: &[Vec<Entry>],
) -> Result<Vec<NodeRef>> {
    let encoded = crate::par::try_map(spans, |span| -> Result<(Vec<u8>, ChunkId, u64)> {
        let (payload, count) = if level == 0 {
            (encode_leaf(format, span)?, span.len() as u64)
        } else {
            let children = span
                .iter()
                .map(NodeRef::from_entry)
                .collect::<Result<Vec<_>>>()?;
            let count = children.iter().map(|c| c.count).sum();
            (encode_interior(level, &children), count)
        };
        let id = ChunkId::for_payload(&payload);
        Ok((payload, id, count))
    })?;
    let kind = if level == 0 { ChunkKind::Leaf } else { ChunkKind::Interior };
    let mut refs = Vec::with_capacity(spans.len());
    for (span, (payload, id, count)) in spans.iter().zip(encoded) {
        sink.put(kind, id, &payload)?;
        refs.push(NodeRef {
            max_key: span.last().expect("spans are non-empty").key.clone(),
            id,
            count,
        });
    }
    Ok(refs)
}

pub(crate) fn build_into(
    sink: &Sink<'_>,
    entries: &[Entry],
    policy: &ChunkingPolicy,
    format: &LeafFormat,
) -> Result<TreeRef> {
    policy.validate()?;
    if entries.is_empty() {
        return Ok(TreeRef::empty(*policy, format.clone()));
    }
    let keys: Vec<&[u8]> = entries.iter().map(|e| e.key.as_slice()).collect();
    let spans: Vec<Vec<Entry>> = boundaries_for_keys(&keys, policy)?
        .into_iter()
        .map(|s| entries[s.range()].to_vec())
        .collect();
    let mut refs = emit_level(sink, format, 0, &spans)?;
    let mut level: u8 = 1;
    while refs.len() > 1 {
        let keys: Vec<&[u8]> = refs.iter().map(|r| r.max_key.as_slice()).collect();
        let spans: Vec<Vec<Entry>> = boundaries_for_keys(&keys, policy)?
            .into_iter()
            .map(|s| refs[s.range()].iter().map(NodeRef::to_entry).collect())
            .collect();
        refs = emit_level(sink, format, level, &spans)?;
        level += 1;
    }
    Ok(TreeRef {
        root: refs[0].id,
        height: level as u32,
        policy: *policy,
        entry_count: entries.len() as u64,
        format: format.clone(),
    })
}

/// Builds a tree from strictly increasing entries.
pub fn build(
    store: &ChunkStore,
    entries: &[Entry],
    policy: &ChunkingPolicy,
    format: &LeafFormat,
) -> Result<TreeRef> {
    build_into(&Sink::Store(store), entries, policy, format)
}

/// Root id `build` would produce, without writing anything.
pub fn build_root(entries: &[Entry], policy: &ChunkingPolicy, format: &LeafFormat) -> Result<ChunkId> {
    Ok(build_into(&Sink::DryRun, entries, policy, format)?.root)
}

/// Opens a tree by root id, materializing a virtual root first.
pub fn open(
    store: &ChunkStore,
    root: &ChunkId,
    policy: &ChunkingPolicy,
    format: &LeafFormat,
) -> Result<TreeRef> {
    let root = resolve(store, root)?;
    if root.is_empty_tree() {
        return Ok(TreeRef::empty(*policy, format.clone()));
    }
    let node = read_node(store, format, &root)?;
    Ok(TreeRef {
        root,
        height: node.level() as u32 + 1,
        policy: *policy,
        entry_count: node.count(),
        format: format.clone(),
    })
}

pub fn lookup(store: &ChunkStore, tree: &TreeRef, key: &[u8]) -> Result<Option<Vec<u8>>> {
    let mut id = resolve(store, &tree.root)?;
    if id.is_empty_tree() {
        return Ok(None);
    }
    loop {
        match read_node(store, &tree.format, &id)? {
            Node::Leaf(entries) => {
                return Ok(entries
                    .binary_search_by(|e| e.key.as_slice().cmp(key))
                    .ok()
                    .map(|i| entries[i].value.clone()));
            }
            Node::Interior { children, .. } => {
                let i = children.partition_point(|c| c.max_key.as_slice() < key);
                match children.get(i) {
                    Some(c) => id = c.id,
                    None => return Ok(None),
                }
            }
        }
    }
}

fn scan_node(
    store: &ChunkStore,
    format: &LeafFormat,
    id: &ChunkId,
    lo: Option<&[u8]>,
    hi: Option<&[u8]>,
    out: &mut Vec<Entry>,
) -> Result<()> {
    match read_node(store, format, id)? {
        Node::Leaf(entries) => {
            out.extend(entries.into_iter().filter(|e| {
                lo.is_none_or(|lo| e.key.as_slice() >= lo) && hi.is_none_or(|hi| e.key.as_slice() < hi)
            }));
        }
        Node::Interior { children, .. } => {
            let start = lo.map_or(0, |lo| children.partition_point(|c| c.max_key.as_slice() < lo));
            for (i, c) in children.iter().enumerate().skip(start) {
                // the child's keys lie above the previous sibling's max key
                if let (Some(hi), Some(prev)) = (hi, i.checked_sub(1).map(|p| &children[p])) {
                    if prev.max_key.as_slice() >= hi {
                        break;
                    }
                }
                scan_node(store, format, &c.id, lo, hi, out)?;
            }
        }
    }
    Ok(())
}

pub(crate) fn scan_bounds(
    store: &ChunkStore,
    tree: &TreeRef,
    lo: Option<&[u8]>,
    hi: Option<&[u8]>,
) -> Result<Vec<Entry>> {
    if let (Some(lo), Some(hi)) = (lo, hi) {
        if lo > hi {
            return Err(Error::InvalidRange);
        }
    }
    let root = resolve(store, &tree.root)?;
    let mut out = Vec::new();
    if !root.is_empty_tree() {
        scan_node(store, &tree.format, &root, lo, hi, &mut out)?;
    }
    Ok(out)
}

/// Entries with `lo <= key < hi`, in key order.
pub fn scan(store: &ChunkStore, tree: &TreeRef, lo: &[u8], hi: &[u8]) -> Result<Vec<Entry>> {
    scan_bounds(store, tree, Some(lo), Some(hi))
}

pub fn scan_all(store: &ChunkStore, tree: &TreeRef) -> Result<Vec<Entry>> {
    scan_bounds(store, tree, None, None)
}

/// True iff the tree is exactly what a fresh build of its contents gives.
pub fn verify_canonical(store: &ChunkStore, tree: &TreeRef) -> bool {
    let Ok(root) = resolve(store, &tree.root) else {
        return false;
    };
    scan_all(store, tree)
        .and_then(|entries| build_root(&entries, &tree.policy, &tree.format))
        .map(|rebuilt| rebuilt == root)
        .unwrap_or(false)
}

/// All chunk ids reachable from the root (including the root).
pub fn reachable_chunks(store: &ChunkStore, tree: &TreeRef) -> Result<Vec<ChunkId>> {
    let root = resolve(store, &tree.root)?;
    let mut out = Vec::new();
    if root.is_empty_tree() {
        return Ok(out);
    }
    let mut stack = vec![root];
    while let Some(id) = stack.pop() {
        out.push(id);
        if let Node::Interior { children, .. } = read_node(store, &tree.format, &id)? {
            stack.extend(children.iter().map(|c| c.id));
        }
    }
    Ok(out)
}

/// Entry counts of every leaf, left to right.
pub fn leaf_sizes(store: &ChunkStore, tree: &TreeRef) -> Result<Vec<u64>> {
    let root = resolve(store, &tree.root)?;
    let mut out = Vec::new();
    if root.is_empty_tree() {
        return Ok(out);
    }
    fn walk(store: &ChunkStore, f: &LeafFormat, id: &ChunkId, out: &mut Vec<u64>) -> Result<()> {
        match read_node(store, f, id)? {
            Node::Leaf(e) => out.push(e.len() as u64),
            Node::Interior { level, children } => {
                if level == 1 {
                    out.extend(children.iter().map(|c| c.count));
                } else {
                    for c in &children {
                        walk(store, f, &c.id, out)?;
                    }
                }
            }
        }
        Ok(())
    }
    walk(store, &tree.format, &root, &mut out)?;
    Ok(out)
}
