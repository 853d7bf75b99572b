//! Storage experiments: chunking policy, branching and attribute layout
//! measured on seeded workloads, each configuration in its own store.

pub mod workload;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::chunker::{expected_span_stats, ChunkingMode, ChunkingPolicy, Entry};
use crate::error::{Error, Result};
use crate::graph::{Database, RowOp, SnapshotId};
use crate::prolly;
use crate::relation::DatabaseSchema;

pub use workload::{gen_workload, table_schema, Layout, Mix, Workload, WorkloadKind, WorkloadSpec, TABLE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    /// Chunking policy under the four basic workloads.
    E1,
    /// Five branches evolving independently from one initial version.
    E2,
    /// Row layout against two attribute groups under column-alternating updates.
    E3,
}

impl Experiment {
    pub fn parse(s: &str) -> Result<Experiment> {
        match s.to_ascii_uppercase().as_str() {
            "E1" => Ok(Experiment::E1),
            "E2" => Ok(Experiment::E2),
            "E3" => Ok(Experiment::E3),
            _ => Err(Error::Parse(format!("unknown experiment {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Experiment::E1 => "E1",
            Experiment::E2 => "E2",
            Experiment::E3 => "E3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// 10k rows, 100 commits (50 per branch in E2).
    Desk,
    /// 50k rows, 500 commits (250 per branch in E2).
    Full,
}

impl Scale {
    pub fn parse(s: &str) -> Result<Scale> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            _ => Err(Error::Parse(format!("unknown scale {s:?}"))),
        }
    }

    fn rows(self) -> usize {
        match self {
            Scale::Desk => 10_000,
            Scale::Full => 50_000,
        }
    }

    fn commits(self) -> usize {
        match self {
            Scale::Desk => 100,
            Scale::Full => 500,
        }
    }
}

pub const OPS_PER_COMMIT: usize = 200;
pub const BRANCHES: usize = 5;
/// Content-mode target. With the benchmark rows (about 50 encoded bytes)
/// this gives leaves of roughly 1 KiB.
pub const CONTENT_TARGET: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportLine {
    pub experiment: String,
    pub workload: String,
    /// `content:<target>` or `capacity:<target>`.
    pub policy: String,
    pub layout: String,
    pub unique_chunks: u64,
    pub total_bytes: u64,
    pub mean_chunk_entries: f64,
    pub seconds: f64,
    /// Store directory of this configuration.
    pub root: PathBuf,
}

impl ReportLine {
    pub fn is_content(&self) -> bool {
        self.policy.starts_with("content")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentReport {
    pub lines: Vec<ReportLine>,
}

pub const TSV_HEADER: &str =
    "experiment\tworkload\tpolicy\tlayout\tunique_chunks\ttotal_bytes\tmean_chunk_entries\tseconds";

impl ExperimentReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(TSV_HEADER);
        out.push('\n');
        for l in &self.lines {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{:.2}\t{:.3}",
                l.experiment, l.workload, l.policy, l.layout, l.unique_chunks, l.total_bytes, l.mean_chunk_entries, l.seconds
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<4} {:<12} {:<12} {:<8} {:>10} {:>14} {:>8} {:>8}\n",
            "exp", "workload", "policy", "layout", "chunks", "bytes", "entries", "secs"
        );
        for l in &self.lines {
            let _ = writeln!(
                out,
                "{:<4} {:<12} {:<12} {:<8} {:>10} {:>14} {:>8.1} {:>8.2}",
                l.experiment, l.workload, l.policy, l.layout, l.unique_chunks, l.total_bytes, l.mean_chunk_entries, l.seconds
            );
        }
        out
    }

    pub fn find(&self, workload: &str, content: bool, layout: &str) -> Option<&ReportLine> {
        self.lines
            .iter()
            .find(|l| l.workload == workload && l.is_content() == content && l.layout == layout)
    }
}

/// Content policy plus a capacity policy whose target is the content
/// policy's realized mean leaf size on the initial rows.
pub fn calibrated_policies(initial_keys: &[Vec<u8>], content_target: usize) -> Result<[ChunkingPolicy; 2]> {
    let content = ChunkingPolicy::content(content_target);
    let entries: Vec<Entry> = initial_keys.iter().map(|k| Entry::new(k.clone(), Vec::new())).collect();
    let mean = expected_span_stats(&entries, &content)?.mean;
    Ok([content, ChunkingPolicy::capacity((mean.round() as usize).max(1))])
}

fn policy_label(p: &ChunkingPolicy) -> String {
    match p.mode {
        ChunkingMode::Content => format!("content:{}", p.target_entries),
        ChunkingMode::Capacity => format!("capacity:{}", p.target_entries),
    }
}

/// Payload bytes of every chunk reachable from the snapshot's trees, as if
/// the snapshot were stored alone.
pub fn snapshot_bytes(db: &Database, snap: &SnapshotId) -> Result<u64> {
    let mut ids = std::collections::HashSet::new();
    for table in db.snapshot(snap)?.tables.keys() {
        let (_, trees) = db.group_trees(snap, table)?;
        for t in &trees {
            ids.extend(prolly::reachable_chunks(db.store(), t)?);
        }
    }
    Ok(ids.iter().filter_map(|id| db.store().payload_len(id)).sum())
}

/// Mean entries per leaf over all trees of a snapshot.
pub fn mean_leaf_entries(db: &Database, snap: &SnapshotId) -> Result<f64> {
    let mut sizes = Vec::new();
    for table in db.snapshot(snap)?.tables.keys() {
        let (_, trees) = db.group_trees(snap, table)?;
        for t in &trees {
            sizes.extend(prolly::leaf_sizes(db.store(), t)?);
        }
    }
    Ok(if sizes.is_empty() {
        0.0
    } else {
        sizes.iter().sum::<u64>() as f64 / sizes.len() as f64
    })
}

fn fresh_db(root: &Path, layout: Layout, policy: ChunkingPolicy) -> Result<Database> {
    let schema = DatabaseSchema::new(vec![table_schema(layout)])?;
    Database::init(root, schema, policy)
}

fn load(db: &mut Database, w: &Workload) -> Result<SnapshotId> {
    let ops: Vec<RowOp> = w
        .initial
        .iter()
        .map(|row| RowOp::Insert {
            table: TABLE.into(),
            row: row.clone(),
        })
        .collect();
    db.commit("main", &ops)
}

struct Config<'a> {
    experiment: Experiment,
    workload: &'a str,
    layout: Layout,
    policy: ChunkingPolicy,
    root: PathBuf,
}

impl Config<'_> {
    fn finish(&self, db: &Database, started: Instant) -> Result<ReportLine> {
        let stats = db.store().stats();
        let head = db.branch("main")?.head;
        Ok(ReportLine {
            experiment: self.experiment.name().into(),
            workload: self.workload.into(),
            policy: policy_label(&self.policy),
            layout: self.layout.name().into(),
            unique_chunks: stats.unique_chunks,
            total_bytes: stats.total_bytes,
            mean_chunk_entries: mean_leaf_entries(db, &head)?,
            seconds: started.elapsed().as_secs_f64(),
            root: self.root.clone(),
        })
    }
}

fn run_single(cfg: &Config<'_>, w: &Workload) -> Result<ReportLine> {
    let started = Instant::now();
    let mut db = fresh_db(&cfg.root, cfg.layout, cfg.policy)?;
    load(&mut db, w)?;
    for batch in &w.batches {
        db.commit("main", batch)?;
    }
    cfg.finish(&db, started)
}

fn run_branches(cfg: &Config<'_>, streams: &[Workload]) -> Result<ReportLine> {
    let started = Instant::now();
    let mut db = fresh_db(&cfg.root, cfg.layout, cfg.policy)?;
    load(&mut db, &streams[0])?;
    let names: Vec<String> = (1..=streams.len()).map(|i| format!("b{i}")).collect();
    for n in &names {
        db.create_branch(n, "main")?;
    }
    let commits = streams[0].batches.len();
    // round-robin so the branches advance together
    for c in 0..commits {
        for (n, w) in names.iter().zip(streams) {
            db.commit(n, &w.batches[c])?;
        }
    }
    cfg.finish(&db, started)
}

fn ensure_clean(out: &Path) -> Result<()> {
    if out.exists() {
        let mut entries = fs::read_dir(out).map_err(|e| Error::io(out, e))?;
        if entries.next().is_some() {
            return Err(Error::RefusingToOverwrite(out.to_path_buf()));
        }
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn spec(kind: WorkloadKind, scale: Scale, commits: usize) -> WorkloadSpec {
    WorkloadSpec::new(kind, scale.rows(), commits, OPS_PER_COMMIT)
}

fn initial_keys(w: &Workload) -> Vec<Vec<u8>> {
    w.initial
        .iter()
        .map(|t| crate::relation::encode_key(&t.values[0]).expect("int keys encode"))
        .collect()
}

/// Runs one experiment with every configuration under `out/<experiment>/`.
pub fn run_experiment(exp: Experiment, scale: Scale, out: &Path) -> Result<ExperimentReport> {
    run_experiment_with(exp, scale, CONTENT_TARGET, out)
}

/// [`run_experiment`] with a chosen content-mode target; the capacity
/// target is calibrated against it.
pub fn run_experiment_with(exp: Experiment, scale: Scale, content_target: usize, out: &Path) -> Result<ExperimentReport> {
    let dir = out.join(exp.name());
    ensure_clean(&dir)?;
    let mut report = ExperimentReport::default();
    match exp {
        Experiment::E1 => {
            for kind in [
                WorkloadKind::AppendOnly,
                WorkloadKind::LocalizedUpdate,
                WorkloadKind::UniformUpdate,
                WorkloadKind::Mixed,
            ] {
                let w = gen_workload(&spec(kind, scale, scale.commits()))?;
                for policy in calibrated_policies(&initial_keys(&w), content_target)? {
                    let cfg = Config {
                        experiment: exp,
                        workload: kind.name(),
                        layout: Layout::Row,
                        policy,
                        root: dir.join(format!("{}-{}", kind.name(), policy_label(&policy).replace(':', "-"))),
                    };
                    report.lines.push(run_single(&cfg, &w)?);
                }
            }
        }
        Experiment::E2 => {
            let streams = (0..BRANCHES as u64)
                .map(|s| {
                    let mut sp = spec(WorkloadKind::Mixed, scale, scale.commits() / 2);
                    sp.stream = s;
                    gen_workload(&sp)
                })
                .collect::<Result<Vec<_>>>()?;
            for policy in calibrated_policies(&initial_keys(&streams[0]), content_target)? {
                let cfg = Config {
                    experiment: exp,
                    workload: "mixed-x5",
                    layout: Layout::Row,
                    policy,
                    root: dir.join(policy_label(&policy).replace(':', "-")),
                };
                report.lines.push(run_branches(&cfg, &streams)?);
            }
        }
        Experiment::E3 => {
            let kind = WorkloadKind::AlternatingColumns;
            let w = gen_workload(&spec(kind, scale, scale.commits()))?;
            for policy in calibrated_policies(&initial_keys(&w), content_target)? {
                for layout in [Layout::Row, Layout::Grouped] {
                    let cfg = Config {
                        experiment: exp,
                        workload: kind.name(),
                        layout,
                        policy,
                        root: dir.join(format!("{}-{}", layout.name(), policy_label(&policy).replace(':', "-"))),
                    };
                    report.lines.push(run_single(&cfg, &w)?);
                }
            }
        }
    }
    fs::write(dir.join("report.tsv"), report.to_tsv()).map_err(|e| Error::io(dir.join("report.tsv"), e))?;
    Ok(report)
}

/// `(row_bytes - grouped_bytes) / row_bytes` for one policy of an E3 report.
pub fn grouping_reduction(report: &ExperimentReport, content: bool) -> Option<f64> {
    let row = report.find("alternating", content, "row")?;
    let grouped = report.find("alternating", content, "grouped")?;
    Some((row.total_bytes as f64 - grouped.total_bytes as f64) / row.total_bytes as f64)
}
