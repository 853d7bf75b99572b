//! Line format of `manifest.log`. One tab-separated record per line; nested
//! values are compact JSON (which never contains raw tabs or newlines).

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{EdgeAnnotation, SnapshotId};
use crate::chunk_store::ChunkId;
use crate::chunker::ChunkingPolicy;
use crate::error::{Error, Result};
use crate::relation::DatabaseSchema;
use crate::sync::{Alert, PendingDelta, SyncEdge};

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub(crate) enum Record {
    Init {
        policy: ChunkingPolicy,
    },
    Schema {
        digest: String,
        schema: DatabaseSchema,
    },
    Snapshot {
        id: SnapshotId,
        schema: String,
        created_at: u64,
        tables: BTreeMap<String, Vec<ChunkId>>,
    },
    Edge {
        child: SnapshotId,
        parent: SnapshotId,
        annotation: EdgeAnnotation,
    },
    BranchCreate {
        name: String,
        head: SnapshotId,
        created_at: u64,
        origin: Option<EdgeAnnotation>,
    },
    BranchHead {
        name: String,
        head: SnapshotId,
    },
    BranchRename {
        old: String,
        new: String,
    },
    SyncAttach(SyncEdge),
    SyncEnqueue {
        edge: String,
        pending: PendingDelta,
    },
    SyncDequeue {
        edge: String,
        count: usize,
    },
    SyncFired {
        edge: String,
        tick: u64,
    },
    SyncDisassociate {
        edge: String,
        reason: String,
    },
    Alert(Alert),
    Tick {
        now: u64,
    },
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("manifest values serialize")
}

fn from_json<T: DeserializeOwned>(s: &str) -> Result<T> {
    serde_json::from_str(s).map_err(|e| Error::Parse(format!("manifest json: {e}")))
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Parse(format!("manifest number {s:?}")))
}

impl Record {
    pub(crate) fn to_line(&self) -> String {
        match self {
            Record::Init { policy } => format!("INIT\t{}", json(policy)),
            Record::Schema { digest, schema } => format!("SCHEMA\t{digest}\t{}", json(schema)),
            Record::Snapshot {
                id,
                schema,
                created_at,
                tables,
            } => format!("SNAPSHOT\t{id}\t{schema}\t{created_at}\t{}", json(tables)),
            Record::Edge {
                child,
                parent,
                annotation,
            } => format!("EDGE\t{child}\t{parent}\t{}", json(annotation)),
            Record::BranchCreate {
                name,
                head,
                created_at,
                origin,
            } => format!("BRANCH\tcreate\t{name}\t{head}\t{created_at}\t{}", json(origin)),
            Record::BranchHead { name, head } => format!("BRANCH\thead\t{name}\t{head}"),
            Record::BranchRename { old, new } => format!("BRANCH\trename\t{old}\t{new}"),
            Record::SyncAttach(edge) => format!("SYNC\tattach\t{}", json(edge)),
            Record::SyncEnqueue { edge, pending } => {
                format!("SYNC\tenqueue\t{edge}\t{}", json(pending))
            }
            Record::SyncDequeue { edge, count } => format!("SYNC\tdequeue\t{edge}\t{count}"),
            Record::SyncFired { edge, tick } => format!("SYNC\tfired\t{edge}\t{tick}"),
            Record::SyncDisassociate { edge, reason } => {
                format!("SYNC\tdisassociate\t{edge}\t{}", json(reason))
            }
            Record::Alert(a) => format!("ALERT\t{}", json(a)),
            Record::Tick { now } => format!("TICK\t{now}"),
        }
    }

    pub(crate) fn parse(line: &str) -> Result<Record> {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::Parse(format!("malformed manifest record {line:?}"));
        Ok(match f.as_slice() {
            ["INIT", p] => Record::Init { policy: from_json(p)? },
            ["SCHEMA", d, s] => Record::Schema {
                digest: d.to_string(),
                schema: from_json(s)?,
            },
            ["SNAPSHOT", id, schema, at, tables] => Record::Snapshot {
                id: SnapshotId::from_hex(id)?,
                schema: schema.to_string(),
                created_at: num(at)?,
                tables: from_json(tables)?,
            },
            ["EDGE", c, p, a] => Record::Edge {
                child: SnapshotId::from_hex(c)?,
                parent: SnapshotId::from_hex(p)?,
                annotation: from_json(a)?,
            },
            ["BRANCH", "create", n, h, at, o] => Record::BranchCreate {
                name: n.to_string(),
                head: SnapshotId::from_hex(h)?,
                created_at: num(at)?,
                origin: from_json(o)?,
            },
            ["BRANCH", "head", n, h] => Record::BranchHead {
                name: n.to_string(),
                head: SnapshotId::from_hex(h)?,
            },
            ["BRANCH", "rename", a, b] => Record::BranchRename {
                old: a.to_string(),
                new: b.to_string(),
            },
            ["SYNC", "attach", e] => Record::SyncAttach(from_json(e)?),
            ["SYNC", "enqueue", e, p] => Record::SyncEnqueue {
                edge: e.to_string(),
                pending: from_json(p)?,
            },
            ["SYNC", "dequeue", e, n] => Record::SyncDequeue {
                edge: e.to_string(),
                count: num(n)?,
            },
            ["SYNC", "fired", e, t] => Record::SyncFired {
                edge: e.to_string(),
                tick: num(t)?,
            },
            ["SYNC", "disassociate", e, r] => Record::SyncDisassociate {
                edge: e.to_string(),
                reason: from_json(r)?,
            },
            ["ALERT", a] => Record::Alert(from_json(a)?),
            ["TICK", t] => Record::Tick { now: num(t)? },
            _ => return Err(bad()),
        })
    }
}
