//! Incremental, canonical application of mutation batches.
//!
//! Each level is processed as a list of node refs. Untouched nodes are kept
//! as-is; starting at the first touched node the level is re-chunked from a
//! merged stream of old entries and mutations until a freshly closed span
//! ends exactly at an old node boundary with no mutation pending for the
//! next old node. At that point the remainder of the level is provably
//! identical to a fresh build, so the old nodes are reused. Replaced nodes
//! turn into mutations (keyed by max-key) for the level above.

use std::cmp::Ordering;

use crate::chunk_store::{ChunkId, ChunkStore};
use crate::chunker::{ChunkingPolicy, Entry, SpanCutter};
use crate::error::{Error, Result};

use super::{emit_level, read_node, resolve, LeafFormat, NodeRef, Sink, TreeRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationOp {
    Insert,
    Update,
    Delete,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mutation {
    pub op: MutationOp,
    pub key: Vec<u8>,
    pub value: Option<Vec<u8>>,
}

impl Mutation {
    pub fn insert(key: impl Into<Vec<u8>>, value: impl Into<Vec<u8>>) -> Mutation {
        Mutation {
            op: MutationOp::Insert,
            key: key.into(),
            value: Some(value.into()),
        }
    }

    pub fn update(key: impl Into<Vec<u8>>, value: impl Into<Vec<u8>>) -> Mutation {
        Mutation {
            op: MutationOp::Update,
            key: key.into(),
            value: Some(value.into()),
        }
    }

    pub fn delete(key: impl Into<Vec<u8>>) -> Mutation {
        Mutation {
            op: MutationOp::Delete,
            key: key.into(),
            value: None,
        }
    }
}

enum Slot {
    Kept(NodeRef),
    Fresh(usize),
}

/// A stretch of the level that was re-chunked: old refs `old` were replaced
/// by the fresh spans `fresh`.
struct Region {
    old: std::ops::Range<usize>,
    fresh: std::ops::Range<usize>,
}

struct LevelPlan {
    slots: Vec<Slot>,
    spans: Vec<Vec<Entry>>,
    regions: Vec<Region>,
}

struct LevelOutcome {
    refs: Vec<NodeRef>,
    parent_muts: Vec<Mutation>,
}

/// Lazily expands old nodes into their entries while re-chunking.
struct OldCursor<'a> {
    store: &'a ChunkStore,
    format: &'a LeafFormat,
    old: &'a [NodeRef],
    node: usize,
    pos: usize,
    loaded: Option<Vec<Entry>>,
}

impl OldCursor<'_> {
    fn peek(&mut self) -> Result<Option<&Entry>> {
        while self.node < self.old.len() {
            if self.loaded.is_none() {
                let node = read_node(self.store, self.format, &self.old[self.node].id)?;
                self.loaded = Some(node.into_entries());
            }
            let len = self.loaded.as_ref().map_or(0, Vec::len);
            if self.pos < len {
                return Ok(self.loaded.as_ref().map(|v| &v[self.pos]));
            }
            self.node += 1;
            self.pos = 0;
            self.loaded = None;
        }
        Ok(None)
    }

    fn advance(&mut self) {
        self.pos += 1;
        if self.loaded.as_ref().is_some_and(|v| self.pos >= v.len()) {
            self.node += 1;
            self.pos = 0;
            self.loaded = None;
        }
    }

    fn at_node_start(&self) -> bool {
        self.pos == 0
    }
}

fn touches(old: &[NodeRef], i: usize, next_mut: Option<&Mutation>) -> bool {
    match next_mut {
        None => false,
        Some(m) => m.key.as_slice() <= old[i].max_key.as_slice() || i + 1 == old.len(),
    }
}

fn plan_level(
    store: &ChunkStore,
    format: &LeafFormat,
    policy: &ChunkingPolicy,
    old: &[NodeRef],
    muts: &[Mutation],
    violations: &mut Vec<String>,
) -> Result<LevelPlan> {
    let mut slots: Vec<Slot> = Vec::with_capacity(old.len() + 4);
    let mut spans: Vec<Vec<Entry>> = Vec::new();
    let mut regions: Vec<Region> = Vec::new();
    let mut i = 0usize;
    let mut m = 0usize;

    while i < old.len() || m < muts.len() {
        if i < old.len() && !touches(old, i, muts.get(m)) {
            slots.push(Slot::Kept(old[i].clone()));
            i += 1;
            continue;
        }
        let region_start = i;
        let fresh_start = spans.len();
        let mut cursor = OldCursor {
            store,
            format,
            old,
            node: i,
            pos: 0,
            loaded: None,
        };
        let mut cutter = SpanCutter::new(*policy);
        let mut span: Vec<Entry> = Vec::new();
        loop {
            let next_mut = muts.get(m);
            let emitted: Option<Entry> = match (cursor.peek()?.cloned(), next_mut) {
                (None, None) => break,
                (Some(o), None) => {
                    cursor.advance();
                    Some(o)
                }
                (None, Some(mu)) => {
                    m += 1;
                    match mu.op {
                        MutationOp::Insert => Some(Entry {
                            key: mu.key.clone(),
                            value: mu.value.clone().unwrap_or_default(),
                        }),
                        _ => {
                            violations.push(missing(&mu.key));
                            None
                        }
                    }
                }
                (Some(o), Some(mu)) => match mu.key.cmp(&o.key) {
                    Ordering::Less => {
                        m += 1;
                        match mu.op {
                            MutationOp::Insert => Some(Entry {
                                key: mu.key.clone(),
                                value: mu.value.clone().unwrap_or_default(),
                            }),
                            _ => {
                                violations.push(missing(&mu.key));
                                None
                            }
                        }
                    }
                    Ordering::Equal => {
                        m += 1;
                        cursor.advance();
                        match mu.op {
                            MutationOp::Insert => {
                                violations.push(format!("insert of existing key {}", hex::encode(&mu.key)));
                                Some(o)
                            }
                            MutationOp::Update => Some(Entry {
                                key: o.key,
                                value: mu.value.clone().unwrap_or_default(),
                            }),
                            MutationOp::Delete => None,
                        }
                    }
                    Ordering::Greater => {
                        cursor.advance();
                        Some(o)
                    }
                },
            };
            let Some(e) = emitted else { continue };
            let closes = cutter.push(&e.key);
            span.push(e);
            if closes {
                slots.push(Slot::Fresh(spans.len()));
                spans.push(std::mem::take(&mut span));
                cutter = SpanCutter::new(*policy);
                if cursor.at_node_start()
                    && cursor.node < old.len()
                    && !touches(old, cursor.node, muts.get(m))
                {
                    break;
                }
            }
        }
        if !span.is_empty() {
            slots.push(Slot::Fresh(spans.len()));
            spans.push(span);
        }
        // the loop exits at a resync point or once everything is consumed
        i = cursor.node;
        regions.push(Region {
            old: region_start..i,
            fresh: fresh_start..spans.len(),
        });
    }

    Ok(LevelPlan {
        slots,
        spans,
        regions,
    })
}

fn emit_plan(
    sink: &Sink<'_>,
    format: &LeafFormat,
    level: u8,
    old: &[NodeRef],
    plan: LevelPlan,
) -> Result<LevelOutcome> {
    let LevelPlan {
        slots,
        spans,
        regions,
    } = plan;
    let fresh = emit_level(sink, format, level, &spans)?;
    let mut parent_muts = Vec::new();
    for r in &regions {
        diff_region(&old[r.old.clone()], &fresh[r.fresh.clone()], &mut parent_muts);
    }
    let refs = slots
        .into_iter()
        .map(|s| match s {
            Slot::Kept(r) => r,
            Slot::Fresh(k) => fresh[k].clone(),
        })
        .collect();
    Ok(LevelOutcome { refs, parent_muts })
}

fn missing(key: &[u8]) -> String {
    format!("key {} does not exist", hex::encode(key))
}

fn diff_region(old: &[NodeRef], new: &[NodeRef], out: &mut Vec<Mutation>) {
    let (mut a, mut b) = (0, 0);
    while a < old.len() || b < new.len() {
        let ord = match (old.get(a), new.get(b)) {
            (Some(x), Some(y)) => x.max_key.cmp(&y.max_key),
            (Some(_), None) => Ordering::Less,
            (None, _) => Ordering::Greater,
        };
        match ord {
            Ordering::Less => {
                out.push(Mutation::delete(old[a].max_key.clone()));
                a += 1;
            }
            Ordering::Greater => {
                let e = new[b].to_entry();
                out.push(Mutation::insert(e.key, e.value));
                b += 1;
            }
            Ordering::Equal => {
                if old[a].id != new[b].id || old[a].count != new[b].count {
                    let e = new[b].to_entry();
                    out.push(Mutation::update(e.key, e.value));
                }
                a += 1;
                b += 1;
            }
        }
    }
}

/// Every node ref of every level, leaves first; the last level is the root.
fn load_levels(store: &ChunkStore, tree: &TreeRef, root: ChunkId) -> Result<Vec<Vec<NodeRef>>> {
    let node = read_node(store, &tree.format, &root)?;
    let top = NodeRef {
        max_key: node
            .max_key()
            .ok_or_else(|| Error::CorruptTree("empty root node".into()))?
            .to_vec(),
        id: root,
        count: node.count(),
    };
    let mut levels = vec![vec![top]];
    let mut current_level = node.level();
    while current_level > 0 {
        let parents = levels.last().unwrap();
        let mut children = Vec::new();
        for p in parents {
            match read_node(store, &tree.format, &p.id)? {
                super::Node::Interior { level, children: c } if level == current_level => {
                    children.extend(c)
                }
                _ => return Err(Error::CorruptTree("inconsistent node levels".into())),
            }
        }
        levels.push(children);
        current_level -= 1;
    }
    levels.reverse();
    Ok(levels)
}

/// Applies a sorted batch; the result is identical to rebuilding from the
/// final entry set.
pub fn apply(store: &ChunkStore, tree: &TreeRef, batch: &[Mutation]) -> Result<TreeRef> {
    if batch.is_empty() {
        return Ok(tree.clone());
    }
    if batch.windows(2).any(|w| w[0].key >= w[1].key) {
        return Err(Error::InvalidInput("mutation batch must be sorted with unique keys".into()));
    }
    for mu in batch {
        if mu.op != MutationOp::Delete && mu.value.is_none() {
            return Err(Error::InvalidInput("insert/update without a value".into()));
        }
    }
    let policy = tree.policy;
    let root = resolve(store, &tree.root)?;
    let old_levels = if root.is_empty_tree() {
        Vec::new()
    } else {
        load_levels(store, tree, root)?
    };

    let sink = Sink::Store(store);
    let mut muts: Vec<Mutation> = batch.to_vec();
    let mut level: u8 = 0;
    loop {
        let old: &[NodeRef] = old_levels.get(level as usize).map_or(&[], |v| v.as_slice());
        let mut violations = Vec::new();
        let plan = plan_level(store, &tree.format, &policy, old, &muts, &mut violations)?;
        if !violations.is_empty() {
            // only the leaf level can see these; nothing has been written yet
            if level == 0 {
                return Err(Error::ConstraintViolation { keys: violations });
            }
            return Err(Error::CorruptTree(format!(
                "interior rewrite failed: {}",
                violations.join(", ")
            )));
        }
        let out = emit_plan(&sink, &tree.format, level, old, plan)?;
        let entry_count = out.refs.iter().map(|r| r.count).sum();
        if out.refs.len() <= 1 {
            return Ok(match out.refs.first() {
                None => TreeRef::empty(policy, tree.format.clone()),
                Some(r) => TreeRef {
                    root: r.id,
                    height: level as u32 + 1,
                    policy,
                    entry_count,
                    format: tree.format.clone(),
                },
            });
        }
        muts = if old_levels.len() > level as usize + 1 {
            out.parent_muts
        } else {
            // the old tree had no level above this one
            out.refs
                .iter()
                .map(|r| {
                    let e = r.to_entry();
                    Mutation::insert(e.key, e.value)
                })
                .collect()
        };
        level += 1;
    }
}
