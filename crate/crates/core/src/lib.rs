//! A versioned, branching relational storage engine.
//!
//! Tables are stored as Prolly trees (one per attribute group) over a
//! content-addressed chunk store, so snapshots that share data share chunks.
//! Snapshots form a graph with named branches; sync edges keep branches,
//! schema versions and views up to date with each other.
//!
//! ```
//! use livedb::{ChunkingPolicy, Database, RowOp};
//! use livedb::relation::{Column, ColumnType, DatabaseSchema, TableSchema, Tuple, Value};
//!
//! let t = TableSchema::new(
//!     "t",
//!     vec![Column::new("id", ColumnType::Int64), Column::new("name", ColumnType::Utf8)],
//!     "id",
//! );
//! let mut db = Database::in_memory(DatabaseSchema::new(vec![t]).unwrap(), ChunkingPolicy::content(64)).unwrap();
//! let row = Tuple::new(vec![Value::Int(1), Value::Str("one".into())]);
//! db.commit("main", &[RowOp::Insert { table: "t".into(), row: row.clone() }]).unwrap();
//! db.create_branch("dev", "main").unwrap();
//! assert_eq!(db.get("dev", "t", &Value::Int(1)).unwrap(), Some(row));
//! ```

pub mod bench;
pub mod chunk_store;
pub mod chunker;
pub mod error;
pub mod graph;
pub mod opsfile;
pub mod par;
pub mod prolly;
pub mod relation;
pub mod schema_evolution;
pub mod sync;
pub mod views;

pub use chunk_store::{ChunkId, ChunkKind, ChunkStore, StoreStats};
pub use chunker::{ChunkingMode, ChunkingPolicy, Entry};
pub use error::{Error, Result};
pub use graph::{Database, EdgeAnnotation, EdgeKind, RowOp, SnapshotId, SyncRole, TableDelta};
pub use schema_evolution::{SchemaChangeOp, SchemaChangeOptions, SchemaSync, SyncCapability};
pub use sync::{Condition, Frequency, SyncDirection};
pub use views::ViewDef;
