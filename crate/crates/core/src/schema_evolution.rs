//! Schema-change catalog, sync-capability classification, and row transforms.
//!
//! Forward always means old schema to new schema. A transform maps a row by
//! column name: every output column takes the value of its source column
//! when the input side has one, and otherwise the output column's fill value
//! (its default, or null when nullable). A direction is available exactly
//! when no output column is left without either.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::chunk_store::{ChunkId, Recipe};
use crate::chunker::Entry;
use crate::error::{Error, Result};
use crate::graph::{Database, EdgeAnnotation, EdgeKind, SnapshotId, SyncRole};
use crate::prolly::{self, LeafFormat};
use crate::relation::{parse_column_def, parse_groups, split_tuple, Column, TableSchema, Tuple, Value};
use crate::sync::{ChangeSummary, Frequency, SyncDirection, TableCounts};
use crate::views::ViewDef;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchemaChangeKind {
    AddColumn(Column),
    DropColumn(String),
    RenameColumn { old: String, new: String },
    /// Non-key column names per group.
    RegroupAttributes(Vec<Vec<String>>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaChangeOp {
    pub table: String,
    pub kind: SchemaChangeKind,
}

impl SchemaChangeOp {
    pub fn add_column(table: &str, column: Column) -> Self {
        SchemaChangeOp {
            table: table.into(),
            kind: SchemaChangeKind::AddColumn(column),
        }
    }

    pub fn drop_column(table: &str, column: &str) -> Self {
        SchemaChangeOp {
            table: table.into(),
            kind: SchemaChangeKind::DropColumn(column.into()),
        }
    }

    pub fn rename_column(table: &str, old: &str, new: &str) -> Self {
        SchemaChangeOp {
            table: table.into(),
            kind: SchemaChangeKind::RenameColumn {
                old: old.into(),
                new: new.into(),
            },
        }
    }

    pub fn regroup(table: &str, groups: Vec<Vec<String>>) -> Self {
        SchemaChangeOp {
            table: table.into(),
            kind: SchemaChangeKind::RegroupAttributes(groups),
        }
    }

    /// Parses the CLI form, e.g. `add-column t c:int64:default=0`,
    /// `drop-column t c`, `rename-column t a b`, `regroup t groups=[a|b]`.
    pub fn parse(words: &[&str]) -> Result<SchemaChangeOp> {
        let bad = || Error::Parse(format!("cannot parse schema change {:?}", words.join(" ")));
        match words {
            ["add-column", t, def] => Ok(Self::add_column(t, parse_column_def(def)?)),
            ["drop-column", t, c] => Ok(Self::drop_column(t, c)),
            ["rename-column", t, a, b] => Ok(Self::rename_column(t, a, b)),
            ["regroup", t, g] => {
                let g = g.strip_prefix("groups=").unwrap_or(g);
                Ok(Self::regroup(t, parse_groups(g)?))
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for SchemaChangeOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            SchemaChangeKind::AddColumn(c) => write!(f, "add-column {} {}", self.table, c),
            SchemaChangeKind::DropColumn(c) => write!(f, "drop-column {} {}", self.table, c),
            SchemaChangeKind::RenameColumn { old, new } => {
                write!(f, "rename-column {} {} {}", self.table, old, new)
            }
            SchemaChangeKind::RegroupAttributes(g) => {
                let g: Vec<String> = g.iter().map(|g| g.join(",")).collect();
                write!(f, "regroup {} groups=[{}]", self.table, g.join("|"))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyncCapability {
    Bidirectional,
    ForwardOnly,
    ReverseOnly,
    None,
}

impl SyncCapability {
    pub fn allows(self, d: Direction) -> bool {
        matches!(
            (self, d),
            (SyncCapability::Bidirectional, _)
                | (SyncCapability::ForwardOnly, Direction::Forward)
                | (SyncCapability::ReverseOnly, Direction::Reverse)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Reverse,
}

impl Direction {
    pub fn flip(self) -> Direction {
        match self {
            Direction::Forward => Direction::Reverse,
            Direction::Reverse => Direction::Forward,
        }
    }
}

/// Capability of `op` against the table it changes.
pub fn classify(op: &SchemaChangeOp, table: &TableSchema) -> Result<SyncCapability> {
    // validates the op as a side effect
    SchemaTransform::new(op.clone(), table.clone())?;
    Ok(match &op.kind {
        SchemaChangeKind::AddColumn(c) => {
            if c.default.is_some() || c.nullable {
                SyncCapability::Bidirectional
            } else {
                SyncCapability::ReverseOnly
            }
        }
        SchemaChangeKind::DropColumn(name) => {
            let c = table.column(name).expect("validated above");
            if c.nullable || c.default.is_some() {
                SyncCapability::Bidirectional
            } else {
                SyncCapability::ForwardOnly
            }
        }
        SchemaChangeKind::RenameColumn { .. } | SchemaChangeKind::RegroupAttributes(_) => {
            SyncCapability::Bidirectional
        }
    })
}

/// A validated schema change together with both table versions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaTransform {
    pub op: SchemaChangeOp,
    pub old: TableSchema,
    pub new: TableSchema,
}

impl SchemaTransform {
    pub fn new(op: SchemaChangeOp, old: TableSchema) -> Result<SchemaTransform> {
        if op.table != old.name {
            return Err(Error::Schema(format!(
                "change targets table {} but was given {}",
                op.table, old.name
            )));
        }
        let mut new = old.clone();
        let err = |m: String| Err(Error::Schema(format!("table {}: {m}", old.name)));
        match &op.kind {
            SchemaChangeKind::AddColumn(c) => {
                if old.column(&c.name).is_some() {
                    return err(format!("column {} already exists", c.name));
                }
                new.columns.push(c.clone());
                let last = new.groups.last_mut().expect("validated schema has groups");
                last.columns.push(c.name.clone());
            }
            SchemaChangeKind::DropColumn(name) => {
                if old.column(name).is_none() {
                    return err(format!("no column {name}"));
                }
                if *name == old.primary_key {
                    return err("cannot drop the primary key".into());
                }
                new.columns.retain(|c| &c.name != name);
                for g in &mut new.groups {
                    g.columns.retain(|c| c != name);
                }
                let keep_one = new.groups.first().cloned();
                new.groups.retain(|g| g.columns.len() > 1);
                if new.groups.is_empty() {
                    new.groups.extend(keep_one);
                }
            }
            SchemaChangeKind::RenameColumn { old: a, new: b } => {
                if old.column(a).is_none() {
                    return err(format!("no column {a}"));
                }
                if old.column(b).is_some() {
                    return err(format!("column {b} already exists"));
                }
                for c in &mut new.columns {
                    if &c.name == a {
                        c.name = b.clone();
                    }
                }
                for g in &mut new.groups {
                    for c in &mut g.columns {
                        if c == a {
                            *c = b.clone();
                        }
                    }
                }
                if &new.primary_key == a {
                    new.primary_key = b.clone();
                }
            }
            SchemaChangeKind::RegroupAttributes(groups) => {
                new.groups = groups
                    .iter()
                    .enumerate()
                    .map(|(i, g)| new.make_group(i as u32, g.clone()))
                    .collect();
            }
        }
        new.validate()?;
        Ok(SchemaTransform { op, old, new })
    }

    pub fn input_schema(&self, d: Direction) -> &TableSchema {
        match d {
            Direction::Forward => &self.old,
            Direction::Reverse => &self.new,
        }
    }

    pub fn output_schema(&self, d: Direction) -> &TableSchema {
        match d {
            Direction::Forward => &self.new,
            Direction::Reverse => &self.old,
        }
    }

    /// Name on the input side that feeds output column `out`.
    pub fn source_name<'a>(&'a self, d: Direction, out: &'a str) -> &'a str {
        if let SchemaChangeKind::RenameColumn { old, new } = &self.op.kind {
            match d {
                Direction::Forward if out == new => return old,
                Direction::Reverse if out == old => return new,
                _ => {}
            }
        }
        out
    }

    /// Output-side column name fed by input column `input`, if any.
    pub fn target_name<'a>(&'a self, d: Direction, input: &'a str) -> Option<&'a str> {
        let out = if let SchemaChangeKind::RenameColumn { old, new } = &self.op.kind {
            match d {
                Direction::Forward if input == old => new.as_str(),
                Direction::Reverse if input == new => old.as_str(),
                _ => input,
            }
        } else {
            input
        };
        self.output_schema(d).column(out).map(|c| c.name.as_str())
    }

    pub fn available(&self, d: Direction) -> bool {
        let input = self.input_schema(d);
        self.output_schema(d)
            .columns
            .iter()
            .all(|c| input.column(self.source_name(d, &c.name)).is_some() || c.fill_value().is_some())
    }

    pub fn capability(&self) -> SyncCapability {
        match (self.available(Direction::Forward), self.available(Direction::Reverse)) {
            (true, true) => SyncCapability::Bidirectional,
            (true, false) => SyncCapability::ForwardOnly,
            (false, true) => SyncCapability::ReverseOnly,
            (false, false) => SyncCapability::None,
        }
    }

    fn unavailable(&self, d: Direction) -> Error {
        Error::DirectionUnavailable(format!("{:?} transform of `{}`", d, self.op))
    }

    /// Maps named input values onto the given output columns.
    pub(crate) fn map_named(
        &self,
        d: Direction,
        lookup: &dyn Fn(&str) -> Option<Value>,
        out_columns: &[String],
    ) -> Result<Vec<Value>> {
        let out_schema = self.output_schema(d);
        out_columns
            .iter()
            .map(|name| {
                let col = out_schema
                    .column(name)
                    .ok_or_else(|| Error::Schema(format!("no output column {name}")))?;
                match lookup(self.source_name(d, name)) {
                    Some(v) => Ok(v),
                    None => col.fill_value().ok_or_else(|| self.unavailable(d)),
                }
            })
            .collect()
    }

    pub fn transform_tuple(&self, d: Direction, t: &Tuple) -> Result<Tuple> {
        if !self.available(d) {
            return Err(self.unavailable(d));
        }
        let input = self.input_schema(d);
        input.check_tuple(t)?;
        let by_name: HashMap<&str, &Value> = input
            .columns
            .iter()
            .map(|c| c.name.as_str())
            .zip(&t.values)
            .collect();
        let out_names: Vec<String> = self
            .output_schema(d)
            .columns
            .iter()
            .map(|c| c.name.clone())
            .collect();
        let values = self.map_named(d, &|n| by_name.get(n).map(|v| (*v).clone()), &out_names)?;
        Ok(Tuple { values })
    }

    pub fn forward(&self, t: &Tuple) -> Result<Tuple> {
        self.transform_tuple(Direction::Forward, t)
    }

    pub fn reverse(&self, t: &Tuple) -> Result<Tuple> {
        self.transform_tuple(Direction::Reverse, t)
    }
}

/// The transformation a virtual chunk or a sync edge applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TransformOp {
    Identity,
    Schema {
        change: SchemaTransform,
        direction: Direction,
    },
    View {
        def: ViewDef,
        base: TableSchema,
    },
}

impl TransformOp {
    /// The transform for the opposite direction, if one exists.
    pub fn inverse(&self) -> Option<TransformOp> {
        match self {
            TransformOp::Identity => Some(TransformOp::Identity),
            TransformOp::Schema { change, direction } => {
                let d = direction.flip();
                change.available(d).then(|| TransformOp::Schema {
                    change: change.clone(),
                    direction: d,
                })
            }
            TransformOp::View { .. } => None,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            TransformOp::Identity => "identity".into(),
            TransformOp::Schema { change, direction } => {
                format!("{} ({:?})", change.op, direction)
            }
            TransformOp::View { def, .. } => format!("view {}", def),
        }
    }
}

/// Sync to attach between the old and new chains of a schema change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemaSync {
    /// Old and new chains mirror each other.
    Bidirectional,
    /// Old-chain commits flow to the new chain.
    Forward,
    /// New-chain commits flow back to the old chain, which becomes read-only.
    Reverse,
}

impl SchemaSync {
    pub fn parse(s: &str) -> Result<SchemaSync> {
        match s {
            "bi" => Ok(SchemaSync::Bidirectional),
            "fwd" | "forward" => Ok(SchemaSync::Forward),
            "rev" | "reverse" => Ok(SchemaSync::Reverse),
            _ => Err(Error::Parse(format!("unknown schema sync {s:?}"))),
        }
    }

    fn allowed_by(self, cap: SyncCapability) -> bool {
        match self {
            SchemaSync::Bidirectional => cap == SyncCapability::Bidirectional,
            SchemaSync::Forward => cap.allows(Direction::Forward),
            SchemaSync::Reverse => cap.allows(Direction::Reverse),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SchemaChangeOptions {
    /// Move the branch name to the new chain; the old chain becomes
    /// `<branch>@pre-<n>`.
    pub carry_name: bool,
    pub sync: Option<SchemaSync>,
    /// Derive the new trees on first read instead of now.
    pub lazy: bool,
    /// Name of the new chain when the name is not carried.
    pub new_name: Option<String>,
}

impl Database {
    fn free_name(&self, stem: &str) -> String {
        (1..)
            .map(|n| format!("{stem}-{n}"))
            .find(|name| !self.branches.contains_key(name))
            .expect("unbounded")
    }

    /// Roots of the changed table's groups under the new schema.
    fn evolve_roots(&self, head: &SnapshotId, change: &SchemaTransform, lazy: bool) -> Result<Vec<ChunkId>> {
        let old = &change.old;
        let old_roots = &self.snapshot(head)?.tables[&old.name];
        let old_shapes = old.group_shapes();
        let new_shapes = change.new.group_shapes();
        let forward = Direction::Forward;
        let mut out = vec![None; new_shapes.len()];
        for (gi, shape) in new_shapes.iter().enumerate() {
            // unchanged groups keep their trees: the leaf layout has no column names
            let same = old_shapes.iter().position(|o| {
                o.group_id == shape.group_id
                    && o.columns.len() == shape.columns.len()
                    && o.columns.iter().zip(&shape.columns).all(|(a, b)| {
                        a.name == change.source_name(forward, &b.name) && a.ty == b.ty && a.nullable == b.nullable
                    })
            });
            if let Some(oi) = same {
                out[gi] = Some(old_roots[oi]);
            }
        }
        if lazy {
            for (gi, shape) in new_shapes.iter().enumerate() {
                if out[gi].is_some() {
                    continue;
                }
                let needed: Vec<&str> = shape.columns.iter().map(|c| change.source_name(forward, &c.name)).collect();
                let mut sources = Vec::new();
                let mut source_groups = Vec::new();
                for (oi, o) in old_shapes.iter().enumerate() {
                    if oi == 0 || o.columns[1..].iter().any(|c| needed.contains(&c.name.as_str())) {
                        sources.push(old_roots[oi]);
                        source_groups.push(o.clone());
                    }
                }
                let recipe = Recipe {
                    transform: TransformOp::Schema {
                        change: change.clone(),
                        direction: forward,
                    },
                    sources,
                    source_groups,
                    group: shape.clone(),
                    policy: self.policy,
                };
                out[gi] = Some(self.store.put_virtual(&recipe)?);
            }
        } else if out.iter().any(Option::is_none) {
            let rows = self.scan_at(head, &old.name, None, None)?;
            let mut entries: Vec<Vec<Entry>> = vec![Vec::with_capacity(rows.len()); new_shapes.len()];
            for row in &rows {
                let t = change.forward(row)?;
                for (gi, slice) in split_tuple(&t, &change.new).iter().enumerate() {
                    if out[gi].is_none() {
                        entries[gi].push(new_shapes[gi].to_entry(slice)?);
                    }
                }
            }
            for (gi, shape) in new_shapes.iter().enumerate() {
                if out[gi].is_none() {
                    let format = LeafFormat::Columnar(shape.clone());
                    out[gi] = Some(prolly::build(&self.store, &entries[gi], &self.policy, &format)?.root);
                }
            }
        }
        Ok(out.into_iter().map(|r| r.expect("every group assigned")).collect())
    }

    /// Applies `op` to `branch` by starting a new chain with the changed
    /// schema. Returns the name of the branch holding the new chain.
    pub fn apply_schema_change(
        &mut self,
        branch: &str,
        op: SchemaChangeOp,
        opts: SchemaChangeOptions,
    ) -> Result<String> {
        let head = self.check_committable(branch, false)?.head;
        let old_db = self.schema_of(&head)?.clone();
        let change = SchemaTransform::new(op.clone(), old_db.table(&op.table)?.clone())?;
        let cap = classify(&op, &change.old)?;
        debug_assert_eq!(cap, change.capability());
        let rows_before = self.group_trees(&head, &op.table)?.1.first().map_or(0, |t| t.entry_count);
        if rows_before > 0 && !change.available(Direction::Forward) {
            return Err(Error::Schema(format!(
                "`{op}` gives existing rows no value; it applies only to an empty table"
            )));
        }
        if let Some(s) = opts.sync {
            if !s.allowed_by(cap) {
                return Err(Error::NotBidirectionallyCompatible(format!(
                    "`{op}` supports {cap:?} sync, {s:?} was requested"
                )));
            }
            if s == SchemaSync::Reverse && self.role(branch) != SyncRole::Free {
                return Err(Error::IllegalSyncTopology(format!(
                    "{branch} already takes part in a sync and cannot become a unidirectional target"
                )));
            }
        }
        let new_name = if opts.carry_name {
            branch.to_string()
        } else {
            let name = match &opts.new_name {
                Some(n) => n.clone(),
                None => self.free_name(&format!("{branch}@schema")),
            };
            if self.branches.contains_key(&name) {
                return Err(Error::NameTaken(name));
            }
            name
        };

        let roots = self.evolve_roots(&head, &change, opts.lazy)?;
        let mut new_db = old_db.clone();
        new_db.tables.insert(op.table.clone(), change.new.clone());
        new_db.validate()?;
        let digest = self.register_schema(&new_db)?;
        let mut tables = self.snapshot(&head)?.tables.clone();
        tables.insert(op.table.clone(), roots);

        let mut summary = ChangeSummary {
            is_schema_change: true,
            ..Default::default()
        };
        summary.tables.insert(
            op.table.clone(),
            TableCounts {
                rows_before,
                ..Default::default()
            },
        );
        let tick = self.next_tick();
        let annotation = EdgeAnnotation {
            kind: EdgeKind::SchemaChange,
            description: op.to_string(),
            branch: branch.to_string(),
            actor: "user".into(),
            tick,
            summary: Some(summary.clone()),
            source: None,
        };
        let snap = self.add_snapshot(&digest, tables, vec![(head, annotation.clone())], tick)?;
        self.notify_schema_change(branch, &summary)?;

        let old_name = if opts.carry_name {
            let pre = self.free_name(&format!("{branch}@pre"));
            self.rename_branch(branch, &pre)?;
            pre
        } else {
            branch.to_string()
        };
        self.create_branch_at(&new_name, snap, Some(annotation))?;

        let schema_op = |direction| TransformOp::Schema {
            change: change.clone(),
            direction,
        };
        match opts.sync {
            None => {}
            Some(SchemaSync::Bidirectional) => {
                self.attach_sync(&old_name, &new_name, SyncDirection::Bidirectional, schema_op(Direction::Forward), vec![], Frequency::Immediate)?;
            }
            Some(SchemaSync::Forward) => {
                self.attach_sync(&old_name, &new_name, SyncDirection::Unidirectional, schema_op(Direction::Forward), vec![], Frequency::Immediate)?;
            }
            Some(SchemaSync::Reverse) => {
                self.attach_sync(&new_name, &old_name, SyncDirection::Unidirectional, schema_op(Direction::Reverse), vec![], Frequency::Immediate)?;
            }
        }
        Ok(new_name)
    }
}
