//! The snapshot graph: immutable database states linked by annotated edges,
//! named branches over them, and the operations that move heads.
//!
//! All state changes are expressed as [`Record`]s. Each record is applied to
//! the in-memory state and appended to `<root>/manifest.log`; reopening a
//! database replays the log through the same code path.

mod manifest;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chunk_store::{ChunkId, ChunkStore, StoreStats};
use crate::chunker::{ChunkingPolicy, Entry};
use crate::error::{Error, MergeConflict, Result};
use crate::prolly::{self, LeafFormat, Mutation, TreeRef};
use crate::relation::{
    assemble_tuple, encode_key, split_tuple, DatabaseSchema, TableSchema, Tuple,
    Value,
};
use crate::sync::{Alert, ChangeSummary, SyncEdge, TableCounts};

pub(crate) use manifest::Record;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SnapshotId(pub [u8; 32]);

impl SnapshotId {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn short(&self) -> String {
        self.to_hex()[..12].to_string()
    }

    pub fn from_hex(s: &str) -> Result<SnapshotId> {
        let bytes = hex::decode(s).map_err(|e| Error::Parse(format!("bad snapshot id {s:?}: {e}")))?;
        Ok(SnapshotId(bytes.try_into().map_err(|_| {
            Error::Parse(format!("snapshot id {s:?} is not 32 bytes"))
        })?))
    }
}

impl fmt::Display for SnapshotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for SnapshotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SnapshotId({})", self.short())
    }
}

impl Serialize for SnapshotId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for SnapshotId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        SnapshotId::from_hex(&String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    Dml,
    SchemaChange,
    ViewDefinition,
    Clone,
    Merge,
    AutoPropagation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeAnnotation {
    pub kind: EdgeKind,
    pub description: String,
    /// Branch the derivation happened on.
    pub branch: String,
    pub actor: String,
    /// Logical timestamp of the derivation.
    pub tick: u64,
    pub summary: Option<ChangeSummary>,
    /// For propagated changes: the source snapshot they came from.
    pub source: Option<SnapshotId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub id: SnapshotId,
    /// Digest of the [`DatabaseSchema`] in force.
    pub schema: String,
    /// Per table, the root of each attribute group's tree.
    pub tables: BTreeMap<String, Vec<ChunkId>>,
    pub parents: Vec<(SnapshotId, EdgeAnnotation)>,
    pub created_at: u64,
}

/// Per primary key: whether the key existed at the base, and the row after the change.
type KeyChanges = BTreeMap<Vec<u8>, (bool, Option<Tuple>)>;

fn snapshot_id(
    schema: &str,
    tables: &BTreeMap<String, Vec<ChunkId>>,
    parents: &[(SnapshotId, EdgeAnnotation)],
    created_at: u64,
) -> SnapshotId {
    #[derive(Serialize)]
    struct Manifest<'a> {
        schema: &'a str,
        tables: &'a BTreeMap<String, Vec<ChunkId>>,
        parents: &'a [(SnapshotId, EdgeAnnotation)],
        created_at: u64,
    }
    let text = serde_json::to_vec(&Manifest {
        schema,
        tables,
        parents,
        created_at,
    })
    .expect("manifest serializes");
    SnapshotId(Sha256::digest(&text).into())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branch {
    pub name: String,
    pub head: SnapshotId,
    pub created_at: u64,
    /// How the branch came to be (a clone annotation for `create_branch`).
    pub origin: Option<EdgeAnnotation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyncRole {
    Free,
    UniTarget,
    BiPeer,
}

/// Whole-row changes of one table between two snapshots, sorted by key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TableDelta {
    pub added: Vec<Tuple>,
    pub removed: Vec<Tuple>,
    /// `(old, new)`
    pub modified: Vec<(Tuple, Tuple)>,
}

impl TableDelta {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.modified.is_empty()
    }

    pub fn len(&self) -> usize {
        self.added.len() + self.removed.len() + self.modified.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowOp {
    Insert {
        table: String,
        row: Tuple,
    },
    /// Sets the named columns of an existing row.
    Update {
        table: String,
        key: Value,
        set: Vec<(String, Value)>,
    },
    Delete {
        table: String,
        key: Value,
    },
}

impl RowOp {
    pub fn table(&self) -> &str {
        match self {
            RowOp::Insert { table, .. } | RowOp::Update { table, .. } | RowOp::Delete { table, .. } => table,
        }
    }

    fn key<'a>(&'a self, schema: &TableSchema) -> &'a Value {
        match self {
            RowOp::Insert { row, .. } => schema.pk_of(row),
            RowOp::Update { key, .. } | RowOp::Delete { key, .. } => key,
        }
    }

    /// Update that replaces every non-key column with `row`'s values.
    pub fn replace(schema: &TableSchema, row: Tuple) -> RowOp {
        let key = schema.pk_of(&row).clone();
        let set = schema
            .columns
            .iter()
            .zip(row.values)
            .filter(|(c, _)| c.name != schema.primary_key)
            .map(|(c, v)| (c.name.clone(), v))
            .collect();
        RowOp::Update {
            table: schema.name.clone(),
            key,
            set,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CommitOptions {
    /// Rejects the commit unless this is still the branch head.
    pub expected_head: Option<SnapshotId>,
    pub actor: Option<String>,
    pub message: Option<String>,
}

/// Parameters of an internally driven commit.
pub(crate) struct CommitSpec<'a> {
    pub branch: &'a str,
    pub kind: EdgeKind,
    pub description: Option<String>,
    pub actor: String,
    pub source: Option<SnapshotId>,
    pub extra_parent: Option<SnapshotId>,
    pub via_edge: Option<usize>,
    pub bypass_target_guard: bool,
    pub expected_head: Option<SnapshotId>,
}

pub struct Database {
    pub(crate) store: Arc<ChunkStore>,
    root: Option<PathBuf>,
    pub(crate) policy: ChunkingPolicy,
    pub(crate) schemas: HashMap<String, DatabaseSchema>,
    pub(crate) snapshots: HashMap<SnapshotId, Snapshot>,
    pub(crate) branches: BTreeMap<String, Branch>,
    pub(crate) edges: Vec<SyncEdge>,
    pub(crate) alerts: Vec<Alert>,
    /// Logical clock stamped on snapshots and annotations.
    pub(crate) clock: u64,
    /// Injected tick driving periodic sync.
    pub(crate) now: u64,
    log: Option<fs::File>,
}

pub const MANIFEST_FILE: &str = "manifest.log";
pub const ALERTS_FILE: &str = "alerts.log";

fn valid_branch_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "_-.@/".contains(c));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("invalid branch name {name:?}")))
    }
}

impl Database {
    fn empty(store: ChunkStore, root: Option<PathBuf>, log: Option<fs::File>) -> Database {
        Database {
            store: Arc::new(store),
            root,
            policy: ChunkingPolicy::content(64),
            schemas: HashMap::new(),
            snapshots: HashMap::new(),
            branches: BTreeMap::new(),
            edges: Vec::new(),
            alerts: Vec::new(),
            clock: 0,
            now: 0,
            log,
        }
    }

    fn bootstrap(&mut self, schema: DatabaseSchema, policy: ChunkingPolicy) -> Result<()> {
        schema.validate()?;
        policy.validate()?;
        self.emit(Record::Init { policy })?;
        let digest = self.register_schema(&schema)?;
        let tables = schema
            .tables
            .values()
            .map(|t| (t.name.clone(), vec![ChunkId::EMPTY; t.groups.len()]))
            .collect();
        let id = self.add_snapshot(&digest, tables, Vec::new(), 0)?;
        self.emit(Record::BranchCreate {
            name: "main".into(),
            head: id,
            created_at: 0,
            origin: None,
        })
    }

    /// Creates a fresh database under `root` with one branch, `main`.
    pub fn init(root: impl AsRef<Path>, schema: DatabaseSchema, policy: ChunkingPolicy) -> Result<Database> {
        let root = root.as_ref().to_path_buf();
        let manifest = root.join(MANIFEST_FILE);
        if manifest.exists() {
            return Err(Error::RefusingToOverwrite(root));
        }
        let store = ChunkStore::open(&root)?;
        let log = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&manifest)
            .map_err(|e| Error::io(&manifest, e))?;
        let mut db = Database::empty(store, Some(root), Some(log));
        db.bootstrap(schema, policy)?;
        Ok(db)
    }

    /// Volatile database, for tests and scratch experiments.
    pub fn in_memory(schema: DatabaseSchema, policy: ChunkingPolicy) -> Result<Database> {
        let mut db = Database::empty(ChunkStore::in_memory(), None, None);
        db.bootstrap(schema, policy)?;
        Ok(db)
    }

    /// Reopens a database by replaying its manifest log.
    pub fn open(root: impl AsRef<Path>) -> Result<Database> {
        let root = root.as_ref().to_path_buf();
        let manifest = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let store = ChunkStore::open(&root)?;
        let mut db = Database::empty(store, Some(root), None);
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            db.apply_record(Record::parse(line)?)?;
        }
        for snap in db.snapshots.values() {
            let expect = snapshot_id(&snap.schema, &snap.tables, &snap.parents, snap.created_at);
            if expect != snap.id {
                return Err(Error::CorruptTree(format!(
                    "snapshot {} does not match its manifest",
                    snap.id
                )));
            }
        }
        db.log = Some(
            fs::OpenOptions::new()
                .append(true)
                .open(&manifest)
                .map_err(|e| Error::io(&manifest, e))?,
        );
        Ok(db)
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn store(&self) -> &ChunkStore {
        &self.store
    }

    pub fn stats(&self) -> StoreStats {
        self.store.stats()
    }

    pub fn policy(&self) -> &ChunkingPolicy {
        &self.policy
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn branches(&self) -> impl Iterator<Item = &Branch> {
        self.branches.values()
    }

    pub fn branch(&self, name: &str) -> Result<&Branch> {
        self.branches
            .get(name)
            .ok_or_else(|| Error::NotFound(format!("branch {name}")))
    }

    pub fn snapshot(&self, id: &SnapshotId) -> Result<&Snapshot> {
        self.snapshots
            .get(id)
            .ok_or_else(|| Error::NotFound(format!("snapshot {id}")))
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &Snapshot> {
        self.snapshots.values()
    }

    pub fn schema_of(&self, snap: &SnapshotId) -> Result<&DatabaseSchema> {
        let digest = &self.snapshot(snap)?.schema;
        self.schemas
            .get(digest)
            .ok_or_else(|| Error::NotFound(format!("schema {digest}")))
    }

    pub fn alerts(&self) -> &[Alert] {
        &self.alerts
    }

    pub fn edges(&self) -> &[SyncEdge] {
        &self.edges
    }

    /// Hex digest over the whole graph state; equal iff two handles hold the
    /// same snapshots, branches, sync edges, alerts and clocks.
    pub fn state_digest(&self) -> String {
        let mut snaps: Vec<&Snapshot> = self.snapshots.values().collect();
        snaps.sort_by_key(|s| s.id);
        let mut schemas: Vec<(&String, &DatabaseSchema)> = self.schemas.iter().collect();
        schemas.sort_by_key(|(d, _)| *d);
        let text = serde_json::to_vec(&(
            &self.policy,
            schemas,
            snaps,
            &self.branches,
            &self.edges,
            &self.alerts,
            self.clock,
            self.now,
        ))
        .expect("state serializes");
        hex::encode(Sha256::digest(&text))
    }

    // ---- event sourcing -------------------------------------------------

    pub(crate) fn emit(&mut self, rec: Record) -> Result<()> {
        self.apply_record(rec.clone())?;
        if let Some(log) = &mut self.log {
            let line = rec.to_line() + "\n";
            log.write_all(line.as_bytes())
                .map_err(|e| Error::io(MANIFEST_FILE, e))?;
        }
        if let (Record::Alert(a), Some(root)) = (&rec, &self.root) {
            let path = root.join(ALERTS_FILE);
            let mut f = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            writeln!(f, "{}", serde_json::to_string(a).expect("alert serializes"))
                .map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    fn edge_index(&self, id: &str) -> Result<usize> {
        self.edges
            .iter()
            .position(|e| e.id == id)
            .ok_or_else(|| Error::NotFound(format!("sync edge {id}")))
    }

    fn apply_record(&mut self, rec: Record) -> Result<()> {
        match rec {
            Record::Init { policy } => self.policy = policy,
            Record::Schema { digest, schema } => {
                self.schemas.insert(digest, schema);
            }
            Record::Snapshot {
                id,
                schema,
                created_at,
                tables,
            } => {
                self.clock = self.clock.max(created_at);
                self.snapshots.insert(
                    id,
                    Snapshot {
                        id,
                        schema,
                        tables,
                        parents: Vec::new(),
                        created_at,
                    },
                );
            }
            Record::Edge {
                child,
                parent,
                annotation,
            } => {
                self.clock = self.clock.max(annotation.tick);
                self.snapshots
                    .get_mut(&child)
                    .ok_or_else(|| Error::NotFound(format!("snapshot {child}")))?
                    .parents
                    .push((parent, annotation));
            }
            Record::BranchCreate {
                name,
                head,
                created_at,
                origin,
            } => {
                self.clock = self.clock.max(created_at);
                self.branches.insert(
                    name.clone(),
                    Branch {
                        name,
                        head,
                        created_at,
                        origin,
                    },
                );
            }
            Record::BranchHead { name, head } => {
                self.branches
                    .get_mut(&name)
                    .ok_or_else(|| Error::NotFound(format!("branch {name}")))?
                    .head = head;
            }
            Record::BranchRename { old, new } => {
                let mut b = self
                    .branches
                    .remove(&old)
                    .ok_or_else(|| Error::NotFound(format!("branch {old}")))?;
                b.name = new.clone();
                self.branches.insert(new.clone(), b);
                for e in &mut self.edges {
                    for end in [&mut e.source, &mut e.target] {
                        if *end == old {
                            *end = new.clone();
                        }
                    }
                    for p in &mut e.pending {
                        if p.origin == old {
                            p.origin = new.clone();
                        }
                    }
                }
            }
            Record::SyncAttach(edge) => self.edges.push(edge),
            Record::SyncEnqueue { edge, pending } => {
                let i = self.edge_index(&edge)?;
                self.edges[i].pending.push_back(pending);
            }
            Record::SyncDequeue { edge, count } => {
                let i = self.edge_index(&edge)?;
                let q = &mut self.edges[i].pending;
                q.drain(..count.min(q.len()));
            }
            Record::SyncFired { edge, tick } => {
                let i = self.edge_index(&edge)?;
                self.edges[i].last_fired = tick;
            }
            Record::SyncDisassociate { edge, reason } => {
                let i = self.edge_index(&edge)?;
                self.edges[i].state = crate::sync::EdgeState::Disassociated(reason);
                self.edges[i].pending.clear();
            }
            Record::Alert(a) => self.alerts.push(a),
            Record::Tick { now } => self.now = now,
        }
        Ok(())
    }

    pub(crate) fn register_schema(&mut self, schema: &DatabaseSchema) -> Result<String> {
        let digest = schema.digest();
        if !self.schemas.contains_key(&digest) {
            self.emit(Record::Schema {
                digest: digest.clone(),
                schema: schema.clone(),
            })?;
        }
        Ok(digest)
    }

    pub(crate) fn add_snapshot(
        &mut self,
        schema: &str,
        tables: BTreeMap<String, Vec<ChunkId>>,
        parents: Vec<(SnapshotId, EdgeAnnotation)>,
        created_at: u64,
    ) -> Result<SnapshotId> {
        let id = snapshot_id(schema, &tables, &parents, created_at);
        if self.snapshots.contains_key(&id) {
            return Ok(id);
        }
        self.emit(Record::Snapshot {
            id,
            schema: schema.to_string(),
            created_at,
            tables,
        })?;
        for (parent, annotation) in parents {
            self.emit(Record::Edge {
                child: id,
                parent,
                annotation,
            })?;
        }
        Ok(id)
    }

    pub(crate) fn next_tick(&mut self) -> u64 {
        self.clock + 1
    }

    pub(crate) fn set_head(&mut self, branch: &str, head: SnapshotId) -> Result<()> {
        self.emit(Record::BranchHead {
            name: branch.to_string(),
            head,
        })
    }

    // ---- addressing and reads -------------------------------------------

    /// A branch name (its head) or a snapshot id / unique hex prefix.
    pub fn resolve_target(&self, target: &str) -> Result<SnapshotId> {
        if let Some(b) = self.branches.get(target) {
            return Ok(b.head);
        }
        let t = target.to_ascii_lowercase();
        if t.len() >= 6 && t.chars().all(|c| c.is_ascii_hexdigit()) {
            let hits: Vec<SnapshotId> = self
                .snapshots
                .keys()
                .filter(|id| id.to_hex().starts_with(&t))
                .copied()
                .collect();
            if hits.len() == 1 {
                return Ok(hits[0]);
            }
            if hits.len() > 1 {
                return Err(Error::InvalidInput(format!("snapshot prefix {target} is ambiguous")));
            }
        }
        Err(Error::NotFound(format!("branch or snapshot {target}")))
    }

    pub(crate) fn group_trees(&self, snap: &SnapshotId, table: &str) -> Result<(TableSchema, Vec<TreeRef>)> {
        let s = self.snapshot(snap)?;
        let schema = self.schema_of(snap)?.table(table)?.clone();
        let roots = s
            .tables
            .get(table)
            .ok_or_else(|| Error::NotFound(format!("table {table}")))?;
        let trees = roots
            .iter()
            .zip(schema.group_shapes())
            .map(|(root, shape)| prolly::open(&self.store, root, &self.policy, &LeafFormat::Columnar(shape)))
            .collect::<Result<Vec<_>>>()?;
        Ok((schema, trees))
    }

    fn lookup_row(&self, schema: &TableSchema, trees: &[TreeRef], key: &[u8]) -> Result<Option<Tuple>> {
        let mut slices = Vec::with_capacity(trees.len());
        for (gi, tree) in trees.iter().enumerate() {
            let Some(value) = prolly::lookup(&self.store, tree, key)? else {
                return Ok(None);
            };
            let row = schema.group_shape(gi).from_entry(&Entry::new(key, value))?;
            slices.push(row);
        }
        Ok(Some(assemble_tuple(&slices, schema)?))
    }

    /// Row with primary key `key` at a snapshot.
    pub fn get_at(&self, snap: &SnapshotId, table: &str, key: &Value) -> Result<Option<Tuple>> {
        let (schema, trees) = self.group_trees(snap, table)?;
        self.lookup_row(&schema, &trees, &encode_key(key)?)
    }

    /// Rows with `lo <= key < hi` (either bound optional) at a snapshot.
    pub fn scan_at(
        &self,
        snap: &SnapshotId,
        table: &str,
        lo: Option<&Value>,
        hi: Option<&Value>,
    ) -> Result<Vec<Tuple>> {
        let (schema, trees) = self.group_trees(snap, table)?;
        let lo = lo.map(encode_key).transpose()?;
        let hi = hi.map(encode_key).transpose()?;
        let per_group = crate::par::try_map(&trees, |tree| {
            prolly::scan_bounds(&self.store, tree, lo.as_deref(), hi.as_deref())
        })?;
        let n = per_group.first().map_or(0, Vec::len);
        if per_group.iter().any(|g| g.len() != n) {
            return Err(Error::CorruptTree(format!("groups of table {table} disagree on row count")));
        }
        let shapes = schema.group_shapes();
        (0..n)
            .map(|i| {
                let slices = per_group
                    .iter()
                    .zip(&shapes)
                    .map(|(g, shape)| shape.from_entry(&g[i]))
                    .collect::<Result<Vec<_>>>()?;
                assemble_tuple(&slices, &schema)
            })
            .collect()
    }

    /// Reads through a branch (after flushing deferred syncs into it) or at
    /// a snapshot.
    pub fn get(&mut self, target: &str, table: &str, key: &Value) -> Result<Option<Tuple>> {
        let snap = self.read_target(target)?;
        self.get_at(&snap, table, key)
    }

    pub fn scan(
        &mut self,
        target: &str,
        table: &str,
        lo: Option<&Value>,
        hi: Option<&Value>,
    ) -> Result<Vec<Tuple>> {
        let snap = self.read_target(target)?;
        self.scan_at(&snap, table, lo, hi)
    }

    fn read_target(&mut self, target: &str) -> Result<SnapshotId> {
        if self.branches.contains_key(target) {
            self.flush_before_read(target)?;
        }
        self.resolve_target(target)
    }

    // ---- commits ----------------------------------------------------------

    pub fn commit(&mut self, branch: &str, ops: &[RowOp]) -> Result<SnapshotId> {
        self.commit_with(branch, ops, CommitOptions::default())
    }

    pub fn commit_with(&mut self, branch: &str, ops: &[RowOp], opts: CommitOptions) -> Result<SnapshotId> {
        let spec = CommitSpec {
            branch,
            kind: EdgeKind::Dml,
            description: opts.message,
            actor: opts.actor.unwrap_or_else(|| "user".into()),
            source: None,
            extra_parent: None,
            via_edge: None,
            bypass_target_guard: false,
            expected_head: opts.expected_head,
        };
        self.commit_internal(spec, ops)
    }

    pub(crate) fn check_committable(&self, branch: &str, bypass: bool) -> Result<&Branch> {
        let b = self.branch(branch)?;
        if !bypass && self.role(branch) == SyncRole::UniTarget {
            return Err(Error::SyncTargetImmutable(branch.to_string()));
        }
        Ok(b)
    }

    pub(crate) fn commit_internal(&mut self, spec: CommitSpec<'_>, ops: &[RowOp]) -> Result<SnapshotId> {
        let head = self.check_committable(spec.branch, spec.bypass_target_guard)?.head;
        if let Some(expected) = spec.expected_head {
            if expected != head {
                return Err(Error::NotHead {
                    branch: spec.branch.to_string(),
                    addressed: expected.to_hex(),
                    head: head.to_hex(),
                });
            }
        }
        let (tables, summary) = self.prepare(&head, ops)?;
        let tick = self.next_tick();
        let description = spec.description.clone().unwrap_or_else(|| summary.describe());
        let annotation = EdgeAnnotation {
            kind: spec.kind,
            description,
            branch: spec.branch.to_string(),
            actor: spec.actor.clone(),
            tick,
            summary: Some(summary.clone()),
            source: spec.source,
        };
        let mut parents = vec![(head, annotation.clone())];
        if let Some(p) = spec.extra_parent {
            parents.push((p, annotation));
        }
        let schema = self.snapshot(&head)?.schema.clone();
        let id = self.add_snapshot(&schema, tables, parents, tick)?;
        self.set_head(spec.branch, id)?;
        self.on_commit(spec.branch, head, id, &summary, spec.via_edge)?;
        Ok(id)
    }

    /// Validates `ops` against `base` and computes the new table roots.
    fn prepare(
        &self,
        base: &SnapshotId,
        ops: &[RowOp],
    ) -> Result<(BTreeMap<String, Vec<ChunkId>>, ChangeSummary)> {
        let mut tables = self.snapshot(base)?.tables.clone();
        let db_schema = self.schema_of(base)?;
        let mut by_table: BTreeMap<&str, Vec<&RowOp>> = BTreeMap::new();
        for op in ops {
            db_schema.table(op.table())?;
            by_table.entry(op.table()).or_default().push(op);
        }
        let mut summary = ChangeSummary::default();
        let mut violations = Vec::new();
        let mut planned: Vec<(String, Vec<TreeRef>, Vec<Vec<Mutation>>)> = Vec::new();
        for (table, ops) in by_table {
            let (schema, trees) = self.group_trees(base, table)?;
            let pk_shape = schema.column(&schema.primary_key).expect("validated").shape();
            let mut keyed: Vec<(Vec<u8>, &RowOp)> = Vec::with_capacity(ops.len());
            for op in ops {
                let key = op.key(&schema);
                key.check(&pk_shape)
                    .map_err(|reason| Error::Encoding { pk: key.to_string(), reason })?;
                keyed.push((encode_key(key)?, op));
            }
            keyed.sort_by(|a, b| a.0.cmp(&b.0));
            if let Some(w) = keyed.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(Error::InvalidInput(format!(
                    "key {} appears twice in one commit",
                    w[0].1.key(&schema)
                )));
            }
            let mut counts = TableCounts {
                rows_before: trees.first().map_or(0, |t| t.entry_count),
                ..Default::default()
            };
            let mut muts: Vec<Vec<Mutation>> = vec![Vec::new(); trees.len()];
            let shapes = schema.group_shapes();
            for (kb, op) in &keyed {
                let old = self.lookup_row(&schema, &trees, kb)?;
                match (op, old) {
                    (RowOp::Insert { row, .. }, None) => {
                        schema.check_tuple(row)?;
                        for (gi, slice) in split_tuple(row, &schema).iter().enumerate() {
                            let e = shapes[gi].to_entry(slice)?;
                            muts[gi].push(Mutation::insert(e.key, e.value));
                        }
                        counts.inserted += 1;
                    }
                    (RowOp::Insert { row, .. }, Some(_)) => {
                        violations.push(format!("{table}: insert of existing key {}", schema.pk_of(row)));
                    }
                    (RowOp::Update { key, set, .. }, Some(old)) => {
                        let mut new = old.clone();
                        for (col, v) in set {
                            let i = schema
                                .column_index(col)
                                .ok_or_else(|| Error::Schema(format!("table {table} has no column {col}")))?;
                            if *col == schema.primary_key && v != key {
                                return Err(Error::InvalidInput("updates cannot change the primary key".into()));
                            }
                            new.values[i] = v.clone();
                        }
                        schema.check_tuple(&new)?;
                        let before = split_tuple(&old, &schema);
                        for (gi, slice) in split_tuple(&new, &schema).iter().enumerate() {
                            if *slice != before[gi] {
                                let e = shapes[gi].to_entry(slice)?;
                                muts[gi].push(Mutation::update(e.key, e.value));
                            }
                        }
                        counts.updated += 1;
                    }
                    (RowOp::Delete { .. }, Some(_)) => {
                        for m in muts.iter_mut() {
                            m.push(Mutation::delete(kb.clone()));
                        }
                        counts.deleted += 1;
                    }
                    (RowOp::Update { key, .. } | RowOp::Delete { key, .. }, None) => {
                        violations.push(format!("{table}: key {key} does not exist"));
                    }
                }
            }
            summary.tables.insert(table.to_string(), counts);
            planned.push((table.to_string(), trees, muts));
        }
        if !violations.is_empty() {
            return Err(Error::ConstraintViolation { keys: violations });
        }
        for (table, trees, muts) in planned {
            let jobs: Vec<(TreeRef, Vec<Mutation>)> = trees.into_iter().zip(muts).collect();
            let roots = crate::par::try_map(&jobs, |(tree, m)| {
                prolly::apply(&self.store, tree, m).map(|t| t.root)
            })?;
            tables.insert(table, roots);
        }
        Ok((tables, summary))
    }

    // ---- branches ----------------------------------------------------------

    /// New branch headed at `from` (a branch or snapshot). Writes no chunks.
    pub fn create_branch(&mut self, name: &str, from: &str) -> Result<&Branch> {
        valid_branch_name(name)?;
        if self.branches.contains_key(name) {
            return Err(Error::NameTaken(name.to_string()));
        }
        let head = self.resolve_target(from)?;
        let tick = self.next_tick();
        self.emit(Record::BranchCreate {
            name: name.to_string(),
            head,
            created_at: tick,
            origin: Some(EdgeAnnotation {
                kind: EdgeKind::Clone,
                description: format!("clone of {from}"),
                branch: name.to_string(),
                actor: "user".into(),
                tick,
                summary: None,
                source: Some(head),
            }),
        })?;
        self.branch(name)
    }

    pub(crate) fn create_branch_at(&mut self, name: &str, head: SnapshotId, origin: Option<EdgeAnnotation>) -> Result<()> {
        valid_branch_name(name)?;
        if self.branches.contains_key(name) {
            return Err(Error::NameTaken(name.to_string()));
        }
        let created_at = self.next_tick();
        self.emit(Record::BranchCreate {
            name: name.to_string(),
            head,
            created_at,
            origin,
        })
    }

    pub(crate) fn rename_branch(&mut self, old: &str, new: &str) -> Result<()> {
        valid_branch_name(new)?;
        self.branch(old)?;
        if self.branches.contains_key(new) {
            return Err(Error::NameTaken(new.to_string()));
        }
        self.emit(Record::BranchRename {
            old: old.to_string(),
            new: new.to_string(),
        })
    }

    // ---- history -----------------------------------------------------------

    /// First-parent chain from the root to the branch head, each snapshot
    /// with the annotation of the edge that produced it.
    pub fn log(&self, branch: &str) -> Result<Vec<(SnapshotId, Option<EdgeAnnotation>)>> {
        let mut out = Vec::new();
        let mut cur = Some(self.branch(branch)?.head);
        while let Some(id) = cur {
            let s = self.snapshot(&id)?;
            let first = s.parents.first();
            out.push((id, first.map(|(_, a)| a.clone())));
            cur = first.map(|(p, _)| *p);
        }
        out.reverse();
        Ok(out)
    }

    /// Per-table whole-row changes from `a` to `b`.
    pub fn diff_snapshots(&self, a: &SnapshotId, b: &SnapshotId) -> Result<BTreeMap<String, TableDelta>> {
        let (sa, sb) = (self.snapshot(a)?, self.snapshot(b)?);
        if sa.schema != sb.schema {
            return Err(Error::SchemaMismatch);
        }
        let mut out = BTreeMap::new();
        for (table, roots_a) in &sa.tables {
            if sb.tables.get(table) == Some(roots_a) {
                continue;
            }
            let (schema, ta) = self.group_trees(a, table)?;
            let (_, tb) = self.group_trees(b, table)?;
            let mut keys: BTreeSet<Vec<u8>> = BTreeSet::new();
            for (x, y) in ta.iter().zip(&tb) {
                let d = prolly::diff(&self.store, x, y)?;
                keys.extend(d.added.into_iter().map(|e| e.key));
                keys.extend(d.removed.into_iter().map(|e| e.key));
                keys.extend(d.modified.into_iter().map(|m| m.0));
            }
            let mut delta = TableDelta::default();
            for k in keys {
                match (self.lookup_row(&schema, &ta, &k)?, self.lookup_row(&schema, &tb, &k)?) {
                    (None, Some(n)) => delta.added.push(n),
                    (Some(o), None) => delta.removed.push(o),
                    (Some(o), Some(n)) if o != n => delta.modified.push((o, n)),
                    _ => {}
                }
            }
            if !delta.is_empty() {
                out.insert(table.clone(), delta);
            }
        }
        Ok(out)
    }

    /// Most recent snapshot on the branch's first-parent chain that changed
    /// the row with key `key`.
    pub fn blame(&self, branch: &str, table: &str, key: &Value) -> Result<(SnapshotId, Option<EdgeAnnotation>)> {
        let head = self.branch(branch)?.head;
        if self.get_at(&head, table, key)?.is_none() {
            return Err(Error::NotFound(format!("key {key} in {table} on {branch}")));
        }
        let mut cur = head;
        loop {
            let s = self.snapshot(&cur)?;
            let Some((parent, ann)) = s.parents.first() else {
                return Ok((cur, None));
            };
            let p = self.snapshot(parent)?;
            let same_roots = p.schema == s.schema && p.tables.get(table) == s.tables.get(table);
            if !same_roots {
                let changed = if p.schema != s.schema {
                    let old_schema = self.schema_of(parent)?;
                    old_schema.tables.get(table) != self.schema_of(&cur)?.tables.get(table)
                        || self.get_at(parent, table, key)? != self.get_at(&cur, table, key)?
                } else {
                    self.get_at(parent, table, key)? != self.get_at(&cur, table, key)?
                };
                if changed {
                    return Ok((cur, Some(ann.clone())));
                }
            }
            cur = *parent;
        }
    }

    fn ancestors(&self, start: SnapshotId) -> Result<HashSet<SnapshotId>> {
        let mut seen = HashSet::new();
        let mut queue = VecDeque::from([start]);
        while let Some(id) = queue.pop_front() {
            if seen.insert(id) {
                queue.extend(self.snapshot(&id)?.parents.iter().map(|(p, _)| *p));
            }
        }
        Ok(seen)
    }

    /// Common ancestor with the greatest logical time (smallest id on ties).
    pub fn merge_base(&self, a: &SnapshotId, b: &SnapshotId) -> Result<SnapshotId> {
        let aa = self.ancestors(*a)?;
        let bb = self.ancestors(*b)?;
        aa.intersection(&bb)
            .map(|id| (self.snapshots[id].created_at, *id))
            .max_by(|x, y| x.0.cmp(&y.0).then(y.1.cmp(&x.1)))
            .map(|(_, id)| id)
            .ok_or_else(|| Error::InvalidInput("snapshots share no ancestor".into()))
    }

    /// Three-way merge of `src` into branch `dst`; all-or-nothing.
    pub fn merge(&mut self, src: &str, dst: &str) -> Result<SnapshotId> {
        let src_id = self.resolve_target(src)?;
        let dst_head = self.check_committable(dst, false)?.head;
        if self.snapshot(&src_id)?.schema != self.snapshot(&dst_head)?.schema {
            return Err(Error::SchemaMismatch);
        }
        let base = self.merge_base(&src_id, &dst_head)?;
        if self.snapshot(&base)?.schema != self.snapshot(&src_id)?.schema {
            return Err(Error::SchemaMismatch);
        }
        let theirs = self.diff_snapshots(&base, &src_id)?;
        let ours = self.diff_snapshots(&base, &dst_head)?;
        let schema = self.schema_of(&src_id)?.clone();
        let mut ops = Vec::new();
        let mut conflicts = Vec::new();
        for (table, delta) in &theirs {
            let ts = schema.table(table)?;
            let changes = |d: &TableDelta| -> Result<KeyChanges> {
                let mut m = BTreeMap::new();
                for t in &d.added {
                    m.insert(encode_key(ts.pk_of(t))?, (false, Some(t.clone())));
                }
                for t in &d.removed {
                    m.insert(encode_key(ts.pk_of(t))?, (true, None));
                }
                for (_, t) in &d.modified {
                    m.insert(encode_key(ts.pk_of(t))?, (true, Some(t.clone())));
                }
                Ok(m)
            };
            let mine = changes(delta)?;
            let other = match ours.get(table) {
                Some(d) => changes(d)?,
                None => BTreeMap::new(),
            };
            for (k, (in_base, new)) in mine {
                if let Some((_, dst_new)) = other.get(&k) {
                    if *dst_new != new {
                        let key = crate::relation::decode_key(&k, ts.pk_type())?.to_string();
                        conflicts.push(MergeConflict {
                            table: table.clone(),
                            key,
                            src: new.as_ref().map(render_tuple),
                            dst: dst_new.as_ref().map(render_tuple),
                        });
                    }
                    continue;
                }
                ops.push(match (in_base, new) {
                    (false, Some(row)) => RowOp::Insert {
                        table: table.clone(),
                        row,
                    },
                    (true, Some(row)) => RowOp::replace(ts, row),
                    (_, None) => RowOp::Delete {
                        table: table.clone(),
                        key: crate::relation::decode_key(&k, ts.pk_type())?,
                    },
                });
            }
        }
        if !conflicts.is_empty() {
            return Err(Error::MergeConflict(conflicts));
        }
        let spec = CommitSpec {
            branch: dst,
            kind: EdgeKind::Merge,
            description: Some(format!("merge {} into {dst}", src_id.short())),
            actor: "user".into(),
            source: Some(src_id),
            extra_parent: Some(src_id),
            via_edge: None,
            bypass_target_guard: false,
            expected_head: None,
        };
        self.commit_internal(spec, &ops)
    }

    /// Every edge in the graph goes from an older to a newer snapshot.
    pub fn audit_acyclic(&self) -> bool {
        self.snapshots.values().all(|s| {
            s.parents
                .iter()
                .all(|(p, _)| self.snapshots.get(p).is_some_and(|ps| ps.created_at < s.created_at))
        })
    }
}

/// `col=value` pairs, comma separated (the ops-file syntax).
pub fn render_tuple(t: &Tuple) -> String {
    t.values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}
