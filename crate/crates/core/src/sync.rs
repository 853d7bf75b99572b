//! Sync edges between branches: conditional propagation of committed
//! changes, disassociation with alerts, and the propagation frequencies.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CommitSpec, Database, EdgeKind, Record, RowOp, SnapshotId, SyncRole, TableDelta};
use crate::relation::{encode_key, TableSchema, Tuple};
use crate::schema_evolution::TransformOp;
use crate::views::view_delta;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyncDirection {
    Unidirectional,
    Bidirectional,
}

impl SyncDirection {
    pub fn parse(s: &str) -> Result<SyncDirection> {
        match s {
            "uni" | "unidirectional" => Ok(SyncDirection::Unidirectional),
            "bi" | "bidirectional" => Ok(SyncDirection::Bidirectional),
            _ => Err(Error::Parse(format!("unknown sync direction {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frequency {
    Immediate,
    /// Flushed when the receiving branch is read.
    Deferred,
    /// Flushed only by an explicit `sync_now`.
    OnDemand,
    /// Flushed by `tick` once the period has elapsed.
    Periodic(u64),
}

impl Frequency {
    pub fn parse(s: &str) -> Result<Frequency> {
        match s {
            "immediate" => Ok(Frequency::Immediate),
            "deferred" => Ok(Frequency::Deferred),
            "ondemand" | "on-demand" => Ok(Frequency::OnDemand),
            _ => match s.strip_prefix("periodic:").map(str::parse::<u64>) {
                Some(Ok(p)) if p > 0 => Ok(Frequency::Periodic(p)),
                _ => Err(Error::Parse(format!("unknown frequency {s:?}"))),
            },
        }
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frequency::Immediate => f.write_str("immediate"),
            Frequency::Deferred => f.write_str("deferred"),
            Frequency::OnDemand => f.write_str("ondemand"),
            Frequency::Periodic(p) => write!(f, "periodic:{p}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConditionKind {
    TablesTouched(BTreeSet<String>),
    FractionChanged(f64),
    RowsChanged(u64),
    SchemaChangeInvolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditionAction {
    Block,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub kind: ConditionKind,
    pub action: ConditionAction,
}

impl Condition {
    pub fn block(kind: ConditionKind) -> Result<Condition> {
        match &kind {
            ConditionKind::TablesTouched(t) if t.is_empty() => {
                return Err(Error::InvalidInput("table condition needs at least one table".into()))
            }
            ConditionKind::FractionChanged(x) if !(0.0..=1.0).contains(x) => {
                return Err(Error::InvalidInput(format!("fraction {x} outside [0, 1]")))
            }
            _ => {}
        }
        Ok(Condition {
            kind,
            action: ConditionAction::Block,
        })
    }

    /// `tables=t1,t2`, `fraction=0.5`, `rows=N` or `schemachange`.
    pub fn parse(s: &str) -> Result<Condition> {
        let bad = || Error::Parse(format!("unknown condition {s:?}"));
        let kind = match s.split_once('=') {
            None if s == "schemachange" => ConditionKind::SchemaChangeInvolved,
            Some(("tables", list)) => ConditionKind::TablesTouched(
                list.split(',').filter(|t| !t.is_empty()).map(String::from).collect(),
            ),
            Some(("fraction", x)) => ConditionKind::FractionChanged(x.parse().map_err(|_| bad())?),
            Some(("rows", n)) => ConditionKind::RowsChanged(n.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        };
        Condition::block(kind)
    }

    /// Why this condition blocks `summary`, if it does.
    pub fn blocks(&self, s: &ChangeSummary) -> Option<String> {
        match &self.kind {
            ConditionKind::TablesTouched(set) => {
                let hit: Vec<&str> = s
                    .tables
                    .keys()
                    .filter(|t| set.contains(*t))
                    .map(String::as_str)
                    .collect();
                (!hit.is_empty()).then(|| format!("change touches table(s) {}", hit.join(",")))
            }
            ConditionKind::FractionChanged(th) => s.tables.iter().find_map(|(t, c)| {
                let f = c.fraction_changed();
                (f >= *th).then(|| format!("{f:.3} of table {t} changed (threshold {th})"))
            }),
            ConditionKind::RowsChanged(max) => {
                let n = s.rows_changed();
                (n > *max).then(|| format!("{n} rows changed (limit {max})"))
            }
            ConditionKind::SchemaChangeInvolved => {
                s.is_schema_change.then(|| "change involves a schema change".to_string())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableCounts {
    pub inserted: u64,
    pub updated: u64,
    pub deleted: u64,
    pub rows_before: u64,
}

impl TableCounts {
    pub fn changed(&self) -> u64 {
        self.inserted + self.updated + self.deleted
    }

    /// Changed rows over the pre-commit row count; exceeds 1 for commits
    /// inserting more rows than the table held.
    pub fn fraction_changed(&self) -> f64 {
        self.changed() as f64 / self.rows_before.max(1) as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeSummary {
    pub tables: BTreeMap<String, TableCounts>,
    pub is_schema_change: bool,
}

impl ChangeSummary {
    pub fn rows_changed(&self) -> u64 {
        self.tables.values().map(TableCounts::changed).sum()
    }

    pub fn describe(&self) -> String {
        if self.tables.is_empty() {
            return "no row changes".into();
        }
        self.tables
            .iter()
            .map(|(t, c)| format!("{t}: +{} ~{} -{}", c.inserted, c.updated, c.deleted))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alert {
    pub tick: u64,
    pub edge: String,
    pub reason: String,
    pub summary: Option<ChangeSummary>,
}

/// A committed change waiting on a non-immediate edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingDelta {
    /// Branch the change was committed on.
    pub origin: String,
    pub before: SnapshotId,
    pub after: SnapshotId,
    pub summary: ChangeSummary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeState {
    Active,
    Disassociated(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncEdge {
    pub id: String,
    pub source: String,
    pub target: String,
    pub direction: SyncDirection,
    /// Source-to-target transform; the reverse side uses its inverse.
    pub transform: TransformOp,
    pub conditions: Vec<Condition>,
    pub frequency: Frequency,
    pub state: EdgeState,
    #[serde(default)]
    pub pending: VecDeque<PendingDelta>,
    pub last_fired: u64,
}

impl SyncEdge {
    pub fn is_active(&self) -> bool {
        self.state == EdgeState::Active
    }

    /// Whether commits on `branch` travel along this edge.
    fn sends_from(&self, branch: &str) -> bool {
        self.source == branch || (self.direction == SyncDirection::Bidirectional && self.target == branch)
    }

    fn other_end(&self, branch: &str) -> &str {
        if self.source == branch {
            &self.target
        } else {
            &self.source
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Block(String),
}

pub fn evaluate_conditions(edge: &SyncEdge, summary: &ChangeSummary) -> Verdict {
    edge.conditions
        .iter()
        .find_map(|c| c.blocks(summary))
        .map_or(Verdict::Pass, Verdict::Block)
}

/// Maps a source table delta through `transform`; `None` when the table
/// does not exist on the receiving side.
fn transform_delta(
    transform: &TransformOp,
    table: &str,
    delta: &TableDelta,
) -> Result<Option<(String, TableDelta)>> {
    match transform {
        TransformOp::Identity => Ok(Some((table.to_string(), delta.clone()))),
        TransformOp::Schema { change, direction } => {
            if table != change.op.table {
                return Ok(Some((table.to_string(), delta.clone())));
            }
            let f = |t: &Tuple| change.transform_tuple(*direction, t);
            Ok(Some((
                table.to_string(),
                TableDelta {
                    added: delta.added.iter().map(f).collect::<Result<_>>()?,
                    removed: delta.removed.iter().map(f).collect::<Result<_>>()?,
                    modified: delta
                        .modified
                        .iter()
                        .map(|(o, n)| Ok((f(o)?, f(n)?)))
                        .collect::<Result<_>>()?,
                },
            )))
        }
        TransformOp::View { def, base } => Ok((table == def.base_table)
            .then(|| (def.name.clone(), view_delta(def, base, delta)))),
    }
}

impl Database {
    pub fn role(&self, branch: &str) -> SyncRole {
        let active = self.edges.iter().filter(|e| e.is_active());
        let mut role = SyncRole::Free;
        for e in active {
            match e.direction {
                SyncDirection::Unidirectional if e.target == branch => return SyncRole::UniTarget,
                SyncDirection::Bidirectional if e.source == branch || e.target == branch => {
                    role = SyncRole::BiPeer
                }
                _ => {}
            }
        }
        role
    }

    pub fn edge(&self, id: &str) -> Result<&SyncEdge> {
        self.edges
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::NotFound(format!("sync edge {id}")))
    }

    /// Branches reachable from `from` along active edges.
    fn reachable(&self, from: &str) -> HashSet<String> {
        let mut seen = HashSet::new();
        let mut stack = vec![from.to_string()];
        while let Some(b) = stack.pop() {
            if !seen.insert(b.clone()) {
                continue;
            }
            for e in self.edges.iter().filter(|e| e.is_active() && e.sends_from(&b)) {
                stack.push(e.other_end(&b).to_string());
            }
        }
        seen
    }

    pub fn attach_sync(
        &mut self,
        source: &str,
        target: &str,
        direction: SyncDirection,
        transform: TransformOp,
        conditions: Vec<Condition>,
        frequency: Frequency,
    ) -> Result<String> {
        self.branch(source)?;
        self.branch(target)?;
        if source == target {
            return Err(Error::IllegalSyncTopology(format!("{source} cannot sync with itself")));
        }
        let (rs, rt) = (self.role(source), self.role(target));
        match direction {
            SyncDirection::Unidirectional if rt != SyncRole::Free => {
                return Err(Error::IllegalSyncTopology(format!(
                    "{target} is already a sync participant ({rt:?}) and cannot become a unidirectional target"
                )));
            }
            SyncDirection::Bidirectional if rt == SyncRole::UniTarget || rs == SyncRole::UniTarget => {
                return Err(Error::IllegalSyncTopology(format!(
                    "a unidirectional sync target cannot join a bidirectional sync ({source} <-> {target})"
                )));
            }
            _ => {}
        }
        if direction == SyncDirection::Bidirectional && transform.inverse().is_none() {
            return Err(Error::NotBidirectionallyCompatible(transform.describe()));
        }
        if self.reachable(target).contains(source) {
            return Err(Error::IllegalSyncTopology(format!(
                "{target} already propagates to {source}; the sync would form a cycle"
            )));
        }
        let id = format!("e{}", self.edges.len() + 1);
        self.emit(Record::SyncAttach(SyncEdge {
            id: id.clone(),
            source: source.to_string(),
            target: target.to_string(),
            direction,
            transform,
            conditions,
            frequency,
            state: EdgeState::Active,
            pending: VecDeque::new(),
            last_fired: self.now,
        }))?;
        Ok(id)
    }

    pub fn disassociate(&mut self, edge: &str, reason: &str, summary: Option<ChangeSummary>) -> Result<()> {
        if !self.edge(edge)?.is_active() {
            return Ok(());
        }
        self.emit(Record::SyncDisassociate {
            edge: edge.to_string(),
            reason: reason.to_string(),
        })?;
        self.emit(Record::Alert(Alert {
            tick: self.now,
            edge: edge.to_string(),
            reason: reason.to_string(),
            summary,
        }))
    }

    /// Runs after every commit on `branch`; `via_edge` is the edge that
    /// delivered the commit, which is never used to send it back.
    pub(crate) fn on_commit(
        &mut self,
        branch: &str,
        before: SnapshotId,
        after: SnapshotId,
        summary: &ChangeSummary,
        via_edge: Option<usize>,
    ) -> Result<()> {
        let candidates: Vec<usize> = (0..self.edges.len())
            .filter(|&i| Some(i) != via_edge && self.edges[i].is_active() && self.edges[i].sends_from(branch))
            .collect();
        for i in candidates {
            // an earlier propagation in this loop may have disassociated it
            if !self.edges[i].is_active() {
                continue;
            }
            let id = self.edges[i].id.clone();
            if let Verdict::Block(reason) = evaluate_conditions(&self.edges[i], summary) {
                self.disassociate(&id, &reason, Some(summary.clone()))?;
                continue;
            }
            let pending = PendingDelta {
                origin: branch.to_string(),
                before,
                after,
                summary: summary.clone(),
            };
            match self.edges[i].frequency {
                Frequency::Immediate => self.propagate(i, &[pending])?,
                _ => self.emit(Record::SyncEnqueue { edge: id, pending })?,
            }
        }
        Ok(())
    }

    /// Checks the edges a schema change on `branch` would travel along;
    /// blocked edges are disassociated. Nothing is propagated.
    pub(crate) fn notify_schema_change(&mut self, branch: &str, summary: &ChangeSummary) -> Result<()> {
        for i in 0..self.edges.len() {
            let e = &self.edges[i];
            if !e.is_active() || !e.sends_from(branch) {
                continue;
            }
            if let Verdict::Block(reason) = evaluate_conditions(e, summary) {
                let id = e.id.clone();
                self.disassociate(&id, &reason, Some(summary.clone()))?;
            }
        }
        Ok(())
    }

    /// Applies a run of pending deltas with the same origin as one commit on
    /// the receiving branch. Failures disassociate the edge.
    fn propagate(&mut self, i: usize, batch: &[PendingDelta]) -> Result<()> {
        let (Some(first), Some(last)) = (batch.first(), batch.last()) else {
            return Ok(());
        };
        let edge = self.edges[i].clone();
        if !edge.is_active() {
            return Ok(());
        }
        match self.try_propagate(i, &edge, first, last) {
            Ok(()) => Ok(()),
            Err(e) => {
                let summary = last.summary.clone();
                self.disassociate(&edge.id, &format!("propagation failed: {e}"), Some(summary))
            }
        }
    }

    fn try_propagate(&mut self, i: usize, edge: &SyncEdge, first: &PendingDelta, last: &PendingDelta) -> Result<()> {
        let origin = &first.origin;
        let (receiver, transform) = if *origin == edge.source {
            (edge.target.clone(), edge.transform.clone())
        } else {
            let inv = edge
                .transform
                .inverse()
                .ok_or_else(|| Error::NotBidirectionallyCompatible(edge.transform.describe()))?;
            (edge.source.clone(), inv)
        };
        let deltas = self.diff_snapshots(&first.before, &last.after)?;
        let head = self.branch(&receiver)?.head;
        let schema = self.schema_of(&head)?.clone();
        let mut ops = Vec::new();
        for (table, delta) in &deltas {
            let Some((out_table, out)) = transform_delta(&transform, table, delta)? else {
                continue;
            };
            let ts = schema.table(&out_table)?;
            ops.extend(self.reconcile(&head, ts, &out)?);
        }
        if ops.is_empty() {
            return Ok(());
        }
        let spec = CommitSpec {
            branch: &receiver,
            kind: EdgeKind::AutoPropagation,
            description: Some(format!("sync {} from {origin} ({})", edge.id, transform.describe())),
            actor: format!("sync:{}", edge.id),
            source: Some(last.after),
            extra_parent: None,
            via_edge: Some(i),
            bypass_target_guard: true,
            expected_head: None,
        };
        self.commit_internal(spec, &ops)?;
        Ok(())
    }

    /// Row operations that bring the receiving head to the delta's final
    /// images, skipping rows already in that state.
    fn reconcile(&self, head: &SnapshotId, ts: &TableSchema, delta: &TableDelta) -> Result<Vec<RowOp>> {
        let mut want: BTreeMap<Vec<u8>, (crate::relation::Value, Option<Tuple>)> = BTreeMap::new();
        for t in &delta.removed {
            let k = ts.pk_of(t).clone();
            want.insert(encode_key(&k)?, (k, None));
        }
        for t in delta.added.iter().chain(delta.modified.iter().map(|(_, n)| n)) {
            let k = ts.pk_of(t).clone();
            want.insert(encode_key(&k)?, (k, Some(t.clone())));
        }
        let mut ops = Vec::new();
        for (_, (key, new)) in want {
            let cur = self.get_at(head, &ts.name, &key)?;
            match (cur, new) {
                (None, Some(row)) => ops.push(RowOp::Insert {
                    table: ts.name.clone(),
                    row,
                }),
                (Some(c), Some(row)) if c != row => ops.push(RowOp::replace(ts, row)),
                (Some(_), None) => ops.push(RowOp::Delete {
                    table: ts.name.clone(),
                    key,
                }),
                _ => {}
            }
        }
        Ok(ops)
    }

    fn flush_index(&mut self, i: usize) -> Result<()> {
        let pending: Vec<PendingDelta> = self.edges[i].pending.iter().cloned().collect();
        if pending.is_empty() {
            return Ok(());
        }
        self.emit(Record::SyncDequeue {
            edge: self.edges[i].id.clone(),
            count: pending.len(),
        })?;
        for run in pending.chunk_by(|a, b| a.origin == b.origin) {
            self.propagate(i, run)?;
        }
        Ok(())
    }

    /// Flushes one edge's queue (the only trigger for on-demand edges).
    pub fn sync_now(&mut self, edge: &str) -> Result<()> {
        let i = self
            .edges
            .iter()
            .position(|e| e.id == edge)
            .ok_or_else(|| Error::NotFound(format!("sync edge {edge}")))?;
        self.flush_index(i)
    }

    /// Flushes every deferred edge delivering into `branch`, after first
    /// bringing the senders up to date.
    pub fn flush_before_read(&mut self, branch: &str) -> Result<()> {
        let mut visiting = HashSet::new();
        self.flush_into(branch, &mut visiting)
    }

    fn flush_into(&mut self, branch: &str, visiting: &mut HashSet<String>) -> Result<()> {
        if !visiting.insert(branch.to_string()) {
            return Ok(());
        }
        let incoming: Vec<usize> = (0..self.edges.len())
            .filter(|&i| {
                let e = &self.edges[i];
                e.is_active()
                    && e.frequency == Frequency::Deferred
                    && (e.target == branch || (e.direction == SyncDirection::Bidirectional && e.source == branch))
            })
            .collect();
        for i in incoming {
            let other = self.edges[i].other_end(branch).to_string();
            self.flush_into(&other, visiting)?;
            self.flush_index(i)?;
        }
        Ok(())
    }

    /// Advances the sync clock and fires periodic edges that are due.
    pub fn tick(&mut self, now: u64) -> Result<()> {
        if now < self.now {
            return Err(Error::InvalidInput(format!("tick {now} is before the current tick {}", self.now)));
        }
        self.emit(Record::Tick { now })?;
        for i in 0..self.edges.len() {
            let e = &self.edges[i];
            let Frequency::Periodic(p) = e.frequency else { continue };
            if !e.is_active() || now - e.last_fired < p {
                continue;
            }
            let id = e.id.clone();
            self.emit(Record::SyncFired { edge: id, tick: now })?;
            self.flush_index(i)?;
        }
        Ok(())
    }
}
