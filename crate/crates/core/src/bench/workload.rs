//! Seeded workload generator over the benchmark table
//! `t(pk int64, a int64, b int64, c utf8, d float64)`.

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::error::{Error, Result};
use crate::graph::RowOp;
use crate::relation::{Column, ColumnType, TableSchema, Tuple, Value};

pub const TABLE: &str = "t";
/// Initial keys are spaced this far apart so inserts can land between them.
pub const KEY_STRIDE: i64 = 16;
const TEXT_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WorkloadKind {
    AppendOnly,
    LocalizedUpdate,
    UniformUpdate,
    Mixed,
    AlternatingColumns,
}

impl WorkloadKind {
    pub const ALL: [WorkloadKind; 5] = [
        WorkloadKind::AppendOnly,
        WorkloadKind::LocalizedUpdate,
        WorkloadKind::UniformUpdate,
        WorkloadKind::Mixed,
        WorkloadKind::AlternatingColumns,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WorkloadKind::AppendOnly => "append",
            WorkloadKind::LocalizedUpdate => "localized",
            WorkloadKind::UniformUpdate => "uniform",
            WorkloadKind::Mixed => "mixed",
            WorkloadKind::AlternatingColumns => "alternating",
        }
    }

    pub fn parse(s: &str) -> Result<WorkloadKind> {
        WorkloadKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown workload {s:?}")))
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Operation mix as insert/update/delete fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mix {
    pub insert: f64,
    pub update: f64,
    pub delete: f64,
}

impl Mix {
    pub const MIXED: Mix = Mix {
        insert: 0.4,
        update: 0.4,
        delete: 0.2,
    };
    /// Inside the window of a localized workload.
    pub const LOCALIZED: Mix = Mix {
        insert: 0.3,
        update: 0.5,
        delete: 0.2,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub initial_rows: usize,
    pub commits: usize,
    pub ops_per_commit: usize,
    /// Width in keys of a localized commit's window.
    pub locality_span: usize,
    pub mix: Mix,
    /// Seeds the initial rows.
    pub seed: u64,
    /// Selects an independent commit stream over the same initial rows.
    pub stream: u64,
}

impl WorkloadSpec {
    pub fn new(kind: WorkloadKind, initial_rows: usize, commits: usize, ops_per_commit: usize) -> WorkloadSpec {
        WorkloadSpec {
            kind,
            initial_rows,
            commits,
            ops_per_commit,
            locality_span: 500,
            mix: match kind {
                WorkloadKind::LocalizedUpdate => Mix::LOCALIZED,
                _ => Mix::MIXED,
            },
            seed: 0x5eed_0001,
            stream: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.mix;
        if [m.insert, m.update, m.delete].iter().any(|x| *x < 0.0) || (m.insert + m.update + m.delete - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput("workload mix must be non-negative and sum to 1".into()));
        }
        if self.initial_rows == 0 || self.commits == 0 || self.ops_per_commit == 0 || self.locality_span == 0 {
            return Err(Error::InvalidInput("workload counts must be positive".into()));
        }
        if self.kind == WorkloadKind::LocalizedUpdate && self.ops_per_commit > self.locality_span {
            return Err(Error::InvalidInput("localized commits cannot exceed the window".into()));
        }
        Ok(())
    }
}

/// Attribute layout of the benchmark table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layout {
    Row,
    /// Groups `(a, b)` and `(c, d)`.
    Grouped,
}

impl Layout {
    pub fn name(self) -> &'static str {
        match self {
            Layout::Row => "row",
            Layout::Grouped => "grouped",
        }
    }
}

pub fn table_schema(layout: Layout) -> TableSchema {
    let t = TableSchema::new(
        TABLE,
        vec![
            Column::new("pk", ColumnType::Int64),
            Column::new("a", ColumnType::Int64),
            Column::new("b", ColumnType::Int64),
            Column::new("c", ColumnType::Utf8),
            Column::new("d", ColumnType::Float64),
        ],
        "pk",
    );
    match layout {
        Layout::Row => t,
        Layout::Grouped => t.with_groups(vec![vec!["a", "b"], vec!["c", "d"]]),
    }
}

fn text(rng: &mut SplitMix64) -> String {
    (0..TEXT_LEN).map(|_| (b'a' + rng.random_range(0..26u8)) as char).collect()
}

fn value_for(rng: &mut SplitMix64, column: &str) -> Value {
    match column {
        "a" | "b" => Value::Int(rng.random_range(0..1_000_000)),
        "c" => Value::Str(text(rng)),
        _ => Value::Float(rng.random_range(0..1_000_000u32) as f64 / 100.0),
    }
}

fn random_row(rng: &mut SplitMix64, pk: i64) -> Tuple {
    let mut values = vec![Value::Int(pk)];
    values.extend(["a", "b", "c", "d"].map(|c| value_for(rng, c)));
    Tuple::new(values)
}

fn update(rng: &mut SplitMix64, pk: i64, columns: &[&str]) -> RowOp {
    RowOp::Update {
        table: TABLE.into(),
        key: Value::Int(pk),
        set: columns.iter().map(|c| (c.to_string(), value_for(rng, c))).collect(),
    }
}

const ALL_COLUMNS: [&str; 4] = ["a", "b", "c", "d"];

/// Initial rows and commit batches, fully determined by the spec.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub initial: Vec<Tuple>,
    pub batches: Vec<Vec<RowOp>>,
}

struct Gen<'a> {
    spec: &'a WorkloadSpec,
    rng: SplitMix64,
    /// Live keys, sorted.
    keys: Vec<i64>,
    next_append: i64,
}

impl Gen<'_> {
    fn pick_op(&mut self, mix: Mix) -> u8 {
        let x: f64 = self.rng.random();
        if x < mix.insert {
            0
        } else if x < mix.insert + mix.update {
            1
        } else {
            2
        }
    }

    /// A key in `[lo, hi)` that is neither live nor already used.
    fn fresh_key(&mut self, lo: i64, hi: i64, used: &BTreeSet<i64>) -> Option<i64> {
        for _ in 0..64 {
            let k = self.rng.random_range(lo..hi.max(lo + 1));
            if self.keys.binary_search(&k).is_err() && !used.contains(&k) {
                return Some(k);
            }
        }
        None
    }

    /// Applies `ops` to the live-key model.
    fn settle(&mut self, ops: &[RowOp]) {
        for op in ops {
            match op {
                RowOp::Insert { row, .. } => {
                    let Value::Int(k) = row.values[0] else { unreachable!() };
                    let at = self.keys.binary_search(&k).unwrap_err();
                    self.keys.insert(at, k);
                }
                RowOp::Delete { key: Value::Int(k), .. } => {
                    let at = self.keys.binary_search(k).expect("deleting a live key");
                    self.keys.remove(at);
                }
                _ => {}
            }
        }
    }

    /// Mixed operations on keys drawn by rank from `ranks`, inserting into
    /// the key interval the ranks cover.
    fn mixed_batch(&mut self, mix: Mix, ranks: std::ops::Range<usize>) -> Vec<RowOp> {
        let n = self.spec.ops_per_commit;
        let lo_key = self.keys.get(ranks.start).copied().unwrap_or(0);
        let hi_key = match self.keys.get(ranks.end) {
            Some(k) => *k,
            None => self.keys.last().map_or(KEY_STRIDE, |k| k + KEY_STRIDE),
        };
        let mut used = BTreeSet::new();
        let mut ops = Vec::with_capacity(n);
        for _ in 0..n {
            let kind = if self.keys.is_empty() { 0 } else { self.pick_op(mix) };
            if kind == 0 {
                if let Some(k) = self.fresh_key(lo_key, hi_key, &used) {
                    used.insert(k);
                    let row = random_row(&mut self.rng, k);
                    ops.push(RowOp::Insert { table: TABLE.into(), row });
                }
                continue;
            }
            // a few tries to find a live key this batch has not touched yet
            let mut pick = None;
            for _ in 0..64 {
                let r = self.rng.random_range(ranks.start..ranks.end.min(self.keys.len()).max(ranks.start + 1));
                if let Some(&k) = self.keys.get(r) {
                    if !used.contains(&k) {
                        pick = Some(k);
                        break;
                    }
                }
            }
            let Some(k) = pick else { continue };
            used.insert(k);
            ops.push(if kind == 1 {
                update(&mut self.rng, k, &ALL_COLUMNS)
            } else {
                RowOp::Delete {
                    table: TABLE.into(),
                    key: Value::Int(k),
                }
            });
        }
        ops
    }

    fn distinct_updates(&mut self, ranks: std::ops::Range<usize>, columns: &[&str]) -> Vec<RowOp> {
        let width = ranks.len();
        let n = self.spec.ops_per_commit.min(width);
        let picked = rand::seq::index::sample(&mut self.rng, width, n);
        let mut keys: Vec<i64> = picked.iter().map(|i| self.keys[ranks.start + i]).collect();
        keys.sort_unstable();
        keys.into_iter().map(|k| update(&mut self.rng, k, columns)).collect()
    }

    fn batch(&mut self, commit: usize) -> Vec<RowOp> {
        let spec = self.spec;
        let len = self.keys.len();
        let ops = match spec.kind {
            WorkloadKind::AppendOnly => (0..spec.ops_per_commit)
                .map(|_| {
                    let k = self.next_append;
                    self.next_append += KEY_STRIDE;
                    RowOp::Insert {
                        table: TABLE.into(),
                        row: random_row(&mut self.rng, k),
                    }
                })
                .collect(),
            WorkloadKind::LocalizedUpdate => {
                let span = spec.locality_span.min(len);
                let anchor = self.rng.random_range(0..=len - span);
                self.mixed_batch(spec.mix, anchor..anchor + span)
            }
            WorkloadKind::UniformUpdate => self.distinct_updates(0..len, &ALL_COLUMNS),
            WorkloadKind::Mixed => self.mixed_batch(spec.mix, 0..len),
            WorkloadKind::AlternatingColumns => {
                // commits are numbered from 1
                let columns: &[&str] = if commit % 2 == 1 { &["a", "b"] } else { &["c", "d"] };
                self.distinct_updates(0..len, columns)
            }
        };
        self.settle(&ops);
        ops
    }
}

pub fn gen_workload(spec: &WorkloadSpec) -> Result<Workload> {
    spec.validate()?;
    let mut rng = SplitMix64::seed_from_u64(spec.seed);
    let initial: Vec<Tuple> = (0..spec.initial_rows as i64)
        .map(|i| random_row(&mut rng, i * KEY_STRIDE))
        .collect();
    let stream_seed = spec.seed ^ (spec.stream.wrapping_add(1)).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut g = Gen {
        spec,
        rng: SplitMix64::seed_from_u64(stream_seed),
        keys: (0..spec.initial_rows as i64).map(|i| i * KEY_STRIDE).collect(),
        next_append: spec.initial_rows as i64 * KEY_STRIDE,
    };
    let batches = (1..=spec.commits).map(|c| g.batch(c)).collect();
    Ok(Workload { initial, batches })
}
