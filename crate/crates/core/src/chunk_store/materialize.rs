use std::collections::HashMap;
use std::sync::Arc;

use super::{ChunkId, ChunkKind, ChunkStore, Recipe};
use crate::error::{Error, Result};
use crate::prolly::{self, encode_interior, read_node, resolve, LeafFormat, Node, NodeRef};
use crate::relation::{encode_chunk, GroupShape, RowSlice, Tuple, Value};
use crate::schema_evolution::{Direction, SchemaTransform, TransformOp};

impl ChunkStore {
    /// Returns the content-true id and payload behind `id`, executing its
    /// recipe first if it is virtual. Repeated calls return the same pair.
    /// A recipe that yields no rows resolves to the empty-tree id with an
    /// empty payload.
    pub fn materialize(&self, id: &ChunkId) -> Result<(ChunkId, Arc<[u8]>)> {
        if let Some(new) = self.redirect_of(id) {
            return self.payload_pair(new);
        }
        let chunk = self.get(id)?;
        match chunk.kind {
            ChunkKind::Leaf | ChunkKind::Interior => Ok((*id, chunk.payload.expect("materialized"))),
            ChunkKind::Virtual => {
                let recipe = chunk.recipe.expect("virtual chunks carry recipes");
                let new = self.execute(id, &recipe)?;
                self.record_redirect(*id, new)?;
                self.payload_pair(new)
            }
        }
    }

    fn payload_pair(&self, id: ChunkId) -> Result<(ChunkId, Arc<[u8]>)> {
        if id.is_empty_tree() {
            return Ok((id, Arc::from(&[][..])));
        }
        let chunk = self.get(&id)?;
        Ok((id, chunk.payload.unwrap_or_else(|| Arc::from(&[][..]))))
    }

    fn execute(&self, vid: &ChunkId, r: &Recipe) -> Result<ChunkId> {
        match &r.transform {
            TransformOp::Identity => {
                let src = r
                    .sources
                    .first()
                    .ok_or_else(|| Error::InvalidRecipe("identity recipe without a source".into()))?;
                resolve(self, src)
            }
            TransformOp::Schema { change, direction } => {
                let job = NodeJob {
                    store: self,
                    vid: *vid,
                    change,
                    direction: *direction,
                    out: &r.group,
                    source_groups: &r.source_groups,
                };
                job.run(&r.sources)
            }
            TransformOp::View { def, base } => {
                let view = def.view_schema(base);
                let mut slices: Vec<Vec<RowSlice>> = Vec::new();
                for (src, g) in r.sources.iter().zip(&r.source_groups) {
                    let format = LeafFormat::Columnar(g.clone());
                    let tree = prolly::open(self, src, &r.policy, &format)?;
                    slices.push(
                        prolly::scan_all(self, &tree)?
                            .iter()
                            .map(|e| g.from_entry(e))
                            .collect::<Result<_>>()?,
                    );
                }
                let n = slices.first().map_or(0, Vec::len);
                if slices.iter().any(|s| s.len() != n) {
                    return Err(Error::Materialization {
                        recipe: *vid,
                        key: String::new(),
                        reason: "source groups hold different row counts".into(),
                    });
                }
                let out_shape = view.group_shape(0);
                let mut entries = Vec::new();
                for i in 0..n {
                    let named = named_values(&r.source_groups, &slices, i, vid)?;
                    let t = Tuple::new(
                        base.columns
                            .iter()
                            .map(|c| named.get(c.name.as_str()).cloned().unwrap_or(Value::Null))
                            .collect(),
                    );
                    if def.matches(base, &t) {
                        entries.push(out_shape.to_entry(&def.project(base, &t).values)?);
                    }
                }
                let tree = prolly::build(self, &entries, &r.policy, &LeafFormat::Columnar(out_shape))?;
                Ok(tree.root)
            }
        }
    }
}

/// Name-to-value map for row `i` across all source groups; checks that the
/// sources agree on the primary key.
fn named_values<'a>(
    groups: &'a [GroupShape],
    slices: &[Vec<RowSlice>],
    i: usize,
    vid: &ChunkId,
) -> Result<HashMap<&'a str, Value>> {
    let mut named = HashMap::new();
    let pk = &slices[0][i][0];
    for (g, rows) in groups.iter().zip(slices) {
        let row = &rows[i];
        if &row[0] != pk {
            return Err(Error::Materialization {
                recipe: *vid,
                key: pk.to_string(),
                reason: format!("source groups disagree on the key ({} vs {})", pk, row[0]),
            });
        }
        for (c, v) in g.columns.iter().zip(row) {
            named.insert(c.name.as_str(), v.clone());
        }
    }
    Ok(named)
}

/// Node-by-node execution of a row-preserving schema transform. Sources of
/// one table share their tree shape, so output node `k` derives from source
/// nodes `k` alone.
struct NodeJob<'a> {
    store: &'a ChunkStore,
    vid: ChunkId,
    change: &'a SchemaTransform,
    direction: Direction,
    out: &'a GroupShape,
    source_groups: &'a [GroupShape],
}

impl NodeJob<'_> {
    fn mismatch(&self, reason: &str) -> Error {
        Error::Materialization {
            recipe: self.vid,
            key: String::new(),
            reason: reason.to_string(),
        }
    }

    fn run(&self, sources: &[ChunkId]) -> Result<ChunkId> {
        let ids = sources
            .iter()
            .map(|s| resolve(self.store, s))
            .collect::<Result<Vec<_>>>()?;
        if ids.iter().all(ChunkId::is_empty_tree) {
            return Ok(ChunkId::EMPTY);
        }
        let nodes = ids
            .iter()
            .zip(self.source_groups)
            .map(|(id, g)| read_node(self.store, &LeafFormat::Columnar(g.clone()), id))
            .collect::<Result<Vec<_>>>()?;
        match &nodes[0] {
            Node::Leaf(_) => self.leaf(&nodes),
            Node::Interior { level, children } => {
                let level = *level;
                let mut per_source: Vec<&[NodeRef]> = Vec::with_capacity(nodes.len());
                for n in &nodes {
                    match n {
                        Node::Interior { level: l, children: c }
                            if *l == level
                                && c.len() == children.len()
                                && c.iter().zip(children).all(|(x, y)| x.max_key == y.max_key) =>
                        {
                            per_source.push(c)
                        }
                        _ => return Err(self.mismatch("source trees differ in shape")),
                    }
                }
                let idx: Vec<usize> = (0..children.len()).collect();
                let new_ids = crate::par::try_map(&idx, |&k| {
                    let srcs: Vec<ChunkId> = per_source.iter().map(|c| c[k].id).collect();
                    self.run(&srcs)
                })?;
                let refs: Vec<NodeRef> = children
                    .iter()
                    .zip(new_ids)
                    .map(|(c, id)| NodeRef {
                        max_key: c.max_key.clone(),
                        id,
                        count: c.count,
                    })
                    .collect();
                self.store.put(&encode_interior(level, &refs), ChunkKind::Interior)
            }
        }
    }

    fn leaf(&self, nodes: &[Node]) -> Result<ChunkId> {
        let mut slices: Vec<Vec<RowSlice>> = Vec::with_capacity(nodes.len());
        for (n, g) in nodes.iter().zip(self.source_groups) {
            let Node::Leaf(entries) = n else {
                return Err(self.mismatch("source trees differ in height"));
            };
            slices.push(entries.iter().map(|e| g.from_entry(e)).collect::<Result<_>>()?);
        }
        let n = slices[0].len();
        if slices.iter().any(|s| s.len() != n) {
            return Err(self.mismatch("source leaves hold different row counts"));
        }
        let out_names: Vec<String> = self.out.columns.iter().map(|c| c.name.clone()).collect();
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let named = named_values(self.source_groups, &slices, i, &self.vid)?;
            let row = self
                .change
                .map_named(self.direction, &|c| named.get(c).cloned(), &out_names)
                .map_err(|e| Error::Materialization {
                    recipe: self.vid,
                    key: slices[0][i][0].to_string(),
                    reason: e.to_string(),
                })?;
            rows.push(row);
        }
        self.store.put(&encode_chunk(self.out, &rows)?, ChunkKind::Leaf)
    }
}
