//! Structural diff of two trees built under the same policy.
//!
//! Both sides keep a frontier of unexpanded nodes (in key order) and a
//! buffer of loaded leaf entries. A node whose id appears on the other
//! side's frontier is dropped from both without being read. Otherwise the
//! higher-level front node is expanded first, which tends to line the two
//! frontiers up on shared subtrees before any leaf is loaded.

use std::cmp::Ordering;
use std::collections::VecDeque;

use crate::chunk_store::{ChunkId, ChunkStore};
use crate::chunker::Entry;
use crate::error::{Error, Result};

use super::{read_node, resolve, LeafFormat, Node, TreeRef};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Delta {
    pub added: Vec<Entry>,
    pub removed: Vec<Entry>,
    /// `(key, old value, new value)`
    pub modified: Vec<(Vec<u8>, Vec<u8>, Vec<u8>)>,
}

impl Delta {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.modified.is_empty()
    }

    pub fn len(&self) -> usize {
        self.added.len() + self.removed.len() + self.modified.len()
    }
}

#[derive(Clone)]
struct Front {
    id: ChunkId,
    level: u8,
    /// `None` for a root whose max key is not known yet.
    max_key: Option<Vec<u8>>,
}

struct Side<'a> {
    store: &'a ChunkStore,
    format: &'a LeafFormat,
    frontier: VecDeque<Front>,
    buffer: VecDeque<Entry>,
}

impl Side<'_> {
    fn new<'a>(store: &'a ChunkStore, tree: &'a TreeRef, root: ChunkId) -> Side<'a> {
        let mut frontier = VecDeque::new();
        if !root.is_empty_tree() {
            frontier.push_back(Front {
                id: root,
                level: tree.height.saturating_sub(1) as u8,
                max_key: None,
            });
        }
        Side {
            store,
            format: &tree.format,
            frontier,
            buffer: VecDeque::new(),
        }
    }

    /// Replaces the front node by its children, or moves a leaf's entries
    /// into the buffer.
    fn expand_front(&mut self) -> Result<()> {
        let f = self.frontier.pop_front().expect("front exists");
        match read_node(self.store, self.format, &f.id)? {
            Node::Leaf(entries) => self.buffer.extend(entries),
            Node::Interior { level, children } => {
                for c in children.into_iter().rev() {
                    self.frontier.push_front(Front {
                        id: c.id,
                        level: level - 1,
                        max_key: Some(c.max_key),
                    });
                }
            }
        }
        Ok(())
    }

    /// Loads everything that remains on this side.
    fn drain_all(&mut self) -> Result<Vec<Entry>> {
        while !self.frontier.is_empty() {
            self.expand_front()?;
        }
        Ok(self.buffer.drain(..).collect())
    }

    fn front_level(&self) -> Option<u8> {
        self.frontier.front().map(|f| f.level)
    }
}

fn key_le(a: &Option<Vec<u8>>, b: &Option<Vec<u8>>) -> bool {
    match (a, b) {
        (_, None) => true,
        (None, Some(_)) => false,
        (Some(x), Some(y)) => x <= y,
    }
}

pub fn diff(store: &ChunkStore, a: &TreeRef, b: &TreeRef) -> Result<Delta> {
    if a.policy != b.policy {
        return Err(Error::PolicyMismatch);
    }
    let ra = resolve(store, &a.root)?;
    let rb = resolve(store, &b.root)?;
    let mut delta = Delta::default();
    if ra == rb {
        return Ok(delta);
    }
    let mut sa = Side::new(store, a, ra);
    let mut sb = Side::new(store, b, rb);

    loop {
        // merge whatever both buffers hold
        while let (Some(x), Some(y)) = (sa.buffer.front(), sb.buffer.front()) {
            match x.key.cmp(&y.key) {
                Ordering::Less => delta.removed.push(sa.buffer.pop_front().unwrap()),
                Ordering::Greater => delta.added.push(sb.buffer.pop_front().unwrap()),
                Ordering::Equal => {
                    let x = sa.buffer.pop_front().unwrap();
                    let y = sb.buffer.pop_front().unwrap();
                    if x.value != y.value {
                        delta.modified.push((x.key, x.value, y.value));
                    }
                }
            }
        }

        let a_done = sa.buffer.is_empty() && sa.frontier.is_empty();
        let b_done = sb.buffer.is_empty() && sb.frontier.is_empty();
        if a_done {
            delta.added.extend(sb.drain_all()?);
            break;
        }
        if b_done {
            delta.removed.extend(sa.drain_all()?);
            break;
        }

        // skip a front node that the other side also holds
        if sa.buffer.is_empty() && sb.buffer.is_empty() {
            if let (Some(x), Some(y)) = (sa.frontier.front(), sb.frontier.front()) {
                if x.id == y.id {
                    sa.frontier.pop_front();
                    sb.frontier.pop_front();
                    continue;
                }
            }
        }
        if sa.buffer.is_empty() {
            if let Some(x) = sa.frontier.front() {
                if let Some(j) = sb.frontier.iter().position(|y| y.id == x.id) {
                    // everything on b before the shared node is b-only
                    let rest = sb.frontier.split_off(j);
                    let mut extra = Vec::new();
                    extra.extend(sb.buffer.drain(..));
                    while !sb.frontier.is_empty() {
                        sb.expand_front()?;
                        extra.extend(sb.buffer.drain(..));
                    }
                    sb.frontier = rest;
                    delta.added.extend(extra);
                    sa.frontier.pop_front();
                    sb.frontier.pop_front();
                    continue;
                }
            }
        }
        if sb.buffer.is_empty() {
            if let Some(y) = sb.frontier.front() {
                if let Some(j) = sa.frontier.iter().position(|x| x.id == y.id) {
                    let rest = sa.frontier.split_off(j);
                    let mut extra = Vec::new();
                    extra.extend(sa.buffer.drain(..));
                    while !sa.frontier.is_empty() {
                        sa.expand_front()?;
                        extra.extend(sa.buffer.drain(..));
                    }
                    sa.frontier = rest;
                    delta.removed.extend(extra);
                    sa.frontier.pop_front();
                    sb.frontier.pop_front();
                    continue;
                }
            }
        }

        // expand: prefer the higher level, then the smaller max key
        match (sa.front_level(), sb.front_level()) {
            (Some(la), Some(lb)) if la > 0 || lb > 0 => {
                let pick_a = match la.cmp(&lb) {
                    Ordering::Greater => true,
                    Ordering::Less => false,
                    Ordering::Equal => key_le(
                        &sa.frontier.front().unwrap().max_key,
                        &sb.frontier.front().unwrap().max_key,
                    ),
                };
                if pick_a {
                    sa.expand_front()?;
                } else {
                    sb.expand_front()?;
                }
            }
            (Some(_), Some(_)) => {
                // both fronts are leaves: load whichever buffers ran dry
                if sa.buffer.is_empty() {
                    sa.expand_front()?;
                }
                if sb.buffer.is_empty() {
                    sb.expand_front()?;
                }
            }
            (Some(_), None) => sa.expand_front()?,
            (None, Some(_)) => sb.expand_front()?,
            (None, None) => unreachable!("one side would be done"),
        }
    }
    Ok(delta)
}
