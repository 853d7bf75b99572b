use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use livedb::bench::{run_experiment_with, Experiment, Scale};
use livedb::graph::CommitOptions;
use livedb::relation::{parse_schema_config, Value};
use livedb::schema_evolution::TransformOp;
use livedb::sync::EdgeState;
use livedb::{
    opsfile, ChunkingMode, ChunkingPolicy, Condition, Database, Error, Frequency, Result, SchemaChangeOp,
    SchemaChangeOptions, SchemaSync, SyncDirection, ViewDef,
};

#[derive(Parser)]
#[command(name = "ldb", version, about = "Versioned, branching relational store")]
struct Cli {
    /// Store directory.
    #[arg(long, global = true, env = "LDB_ROOT", default_value = ".ldb")]
    root: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Content,
    Capacity,
}

#[derive(Args)]
struct PolicyArgs {
    #[arg(long, value_enum, default_value = "content")]
    policy: PolicyArg,
    #[arg(long, default_value_t = 64)]
    target_entries: usize,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    min_entries: Option<usize>,
    #[arg(long)]
    max_entries: Option<usize>,
}

impl PolicyArgs {
    fn policy(&self) -> Result<ChunkingPolicy> {
        let mut p = match self.policy {
            PolicyArg::Content => ChunkingPolicy::content(self.target_entries),
            PolicyArg::Capacity => ChunkingPolicy::capacity(self.target_entries),
        };
        if let Some(w) = self.window {
            p.window_w = w;
        }
        if p.mode == ChunkingMode::Content {
            if let Some(m) = self.min_entries {
                p.min_entries = m;
            }
            if let Some(m) = self.max_entries {
                p.max_entries = m;
            }
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Create a store with the tables declared in a schema file.
    Init {
        #[arg(long)]
        schema: PathBuf,
        #[command(flatten)]
        policy: PolicyArgs,
    },
    /// Create a branch at the head of another branch or at a snapshot.
    Branch {
        name: String,
        #[arg(long, default_value = "main")]
        from: String,
    },
    /// List branches with their heads.
    Branches,
    /// Commit the operations of a TSV ops file to a branch.
    Commit {
        branch: String,
        #[arg(long)]
        ops: PathBuf,
        /// Fail unless the branch head is this snapshot.
        #[arg(long)]
        expect: Option<String>,
        #[arg(long)]
        actor: Option<String>,
        #[arg(long, short)]
        message: Option<String>,
    },
    /// Print one row of a branch or snapshot.
    Get { target: String, table: String, key: String },
    /// Print the rows of a table, optionally within [lo, hi].
    Scan {
        target: String,
        table: String,
        #[arg(long)]
        lo: Option<String>,
        #[arg(long)]
        hi: Option<String>,
    },
    /// Print the ops that turn snapshot `a` into snapshot `b`.
    Diff { a: String, b: String },
    /// First-parent history of a branch, oldest first.
    Log { branch: String },
    /// The snapshot that last changed a row.
    Blame { branch: String, table: String, key: String },
    /// Three-way merge of `src` into `dst`.
    Merge { src: String, dst: String },
    /// Change the schema of a branch, e.g. `add-column t c:int64:default=0`.
    Schema {
        branch: String,
        #[arg(required = true, num_args = 1..)]
        change: Vec<String>,
        #[arg(long)]
        sync: Option<String>,
        #[arg(long)]
        lazy: bool,
        #[arg(long)]
        carry_name: bool,
        /// Name of the new chain when the name is not carried.
        #[arg(long)]
        name: Option<String>,
    },
    #[command(subcommand)]
    View(ViewCmd),
    #[command(subcommand)]
    Sync(SyncCmd),
    /// Advance the sync clock: `+N` or an absolute tick.
    Tick { to: String },
    /// List raised alerts.
    Alerts,
    /// Chunk store totals.
    Stats {
        /// Recount from the chunk files instead of the index.
        #[arg(long)]
        rescan: bool,
    },
    /// Run storage experiments.
    Bench {
        /// E1, E2, E3 or all.
        experiment: String,
        #[arg(long, default_value = "desk")]
        scale: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Content-mode target entries per chunk.
        #[arg(long, default_value_t = livedb::bench::CONTENT_TARGET)]
        target_entries: usize,
        /// Disable data parallelism.
        #[arg(long)]
        sequential: bool,
    },
}

#[derive(Subcommand)]
enum ViewCmd {
    /// Create a select/project view kept current from a base branch.
    Create {
        name: String,
        #[arg(long)]
        base: String,
        #[arg(long)]
        table: String,
        /// Comma-separated columns, including the primary key.
        #[arg(long)]
        cols: String,
        #[arg(long = "where")]
        predicate: Option<String>,
        #[arg(long, default_value = "immediate")]
        freq: String,
        #[arg(long = "cond")]
        conditions: Vec<String>,
    },
}

#[derive(Subcommand)]
enum SyncCmd {
    Attach {
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        #[arg(long, default_value = "uni")]
        direction: String,
        #[arg(long, default_value = "immediate")]
        freq: String,
        #[arg(long = "cond")]
        conditions: Vec<String>,
    },
    /// Deliver everything pending on an edge.
    Now { edge: String },
    List,
}

fn parse_conditions(cs: &[String]) -> Result<Vec<Condition>> {
    cs.iter().map(|c| Condition::parse(c)).collect()
}

fn key_for(db: &Database, target: &str, table: &str, key: &str) -> Result<Value> {
    let snap = db.resolve_target(target)?;
    Value::parse(key, db.schema_of(&snap)?.table(table)?.pk_type())
}

fn read_file(p: &Path) -> Result<String> {
    fs::read_to_string(p).map_err(|e| Error::io(p, e))
}

fn run(cli: Cli) -> Result<()> {
    let root = cli.root;
    if let Cmd::Init { schema, policy } = &cli.cmd {
        let s = parse_schema_config(&read_file(schema)?)?;
        let db = Database::init(&root, s, policy.policy()?)?;
        println!("{}", db.branch("main")?.head);
        return Ok(());
    }
    if let Cmd::Bench {
        experiment,
        scale,
        out,
        target_entries,
        sequential,
    } = &cli.cmd
    {
        livedb::par::set_parallel(!sequential);
        let scale = Scale::parse(scale)?;
        let exps = if experiment.eq_ignore_ascii_case("all") {
            vec![Experiment::E1, Experiment::E2, Experiment::E3]
        } else {
            vec![Experiment::parse(experiment)?]
        };
        for e in exps {
            let report = run_experiment_with(e, scale, *target_entries, out)?;
            print!("{}", report.to_table());
        }
        return Ok(());
    }

    let mut db = Database::open(&root)?;
    match cli.cmd {
        Cmd::Init { .. } | Cmd::Bench { .. } => unreachable!("handled above"),
        Cmd::Branch { name, from } => {
            let b = db.create_branch(&name, &from)?;
            println!("{}\t{}", b.name, b.head);
        }
        Cmd::Branches => {
            for b in db.branches() {
                println!("{}\t{}", b.name, b.head);
            }
        }
        Cmd::Commit {
            branch,
            ops,
            expect,
            actor,
            message,
        } => {
            let head = db.branch(&branch)?.head;
            let ops = opsfile::parse_ops(&read_file(&ops)?, db.schema_of(&head)?)?;
            let expected_head = expect.map(|e| db.resolve_target(&e)).transpose()?;
            let opts = CommitOptions {
                expected_head,
                actor,
                message,
            };
            println!("{}", db.commit_with(&branch, &ops, opts)?);
        }
        Cmd::Get { target, table, key } => {
            let k = key_for(&db, &target, &table, &key)?;
            let row = db.get(&target, &table, &k)?.ok_or_else(|| Error::NotFound(format!("{table}[{key}]")))?;
            let snap = db.resolve_target(&target)?;
            println!("{}", opsfile::render_row(db.schema_of(&snap)?.table(&table)?, &row));
        }
        Cmd::Scan { target, table, lo, hi } => {
            let lo = lo.map(|v| key_for(&db, &target, &table, &v)).transpose()?;
            let hi = hi.map(|v| key_for(&db, &target, &table, &v)).transpose()?;
            let rows = db.scan(&target, &table, lo.as_ref(), hi.as_ref())?;
            let snap = db.resolve_target(&target)?;
            let t = db.schema_of(&snap)?.table(&table)?;
            for row in &rows {
                println!("{}", opsfile::render_row(t, row));
            }
        }
        Cmd::Diff { a, b } => {
            let (a, b) = (db.resolve_target(&a)?, db.resolve_target(&b)?);
            let deltas = db.diff_snapshots(&a, &b)?;
            for line in opsfile::render_delta(db.schema_of(&b)?, &deltas)? {
                println!("{line}");
            }
        }
        Cmd::Log { branch } => {
            for (id, ann) in db.log(&branch)? {
                match ann {
                    Some(a) => println!(
                        "{id}\t{:?}\t{}\t{}\t{}\t{}",
                        a.kind, a.branch, a.actor, a.tick, a.description
                    ),
                    None => println!("{id}\tRoot"),
                }
            }
        }
        Cmd::Blame { branch, table, key } => {
            let k = key_for(&db, &branch, &table, &key)?;
            let (id, ann) = db.blame(&branch, &table, &k)?;
            match ann {
                Some(a) => println!("{id}\t{:?}\t{}\t{}\t{}", a.kind, a.actor, a.tick, a.description),
                None => println!("{id}\tRoot"),
            }
        }
        Cmd::Merge { src, dst } => println!("{}", db.merge(&src, &dst)?),
        Cmd::Schema {
            branch,
            change,
            sync,
            lazy,
            carry_name,
            name,
        } => {
            let words: Vec<&str> = change.iter().map(String::as_str).collect();
            let op = SchemaChangeOp::parse(&words)?;
            let opts = SchemaChangeOptions {
                carry_name,
                sync: sync.as_deref().map(SchemaSync::parse).transpose()?,
                lazy,
                new_name: name,
            };
            let new = db.apply_schema_change(&branch, op, opts)?;
            println!("{new}\t{}", db.branch(&new)?.head);
        }
        Cmd::View(ViewCmd::Create {
            name,
            base,
            table,
            cols,
            predicate,
            freq,
            conditions,
        }) => {
            let head = db.branch(&base)?.head;
            let cols: Vec<&str> = cols.split(',').collect();
            let def = ViewDef::parse(&name, db.schema_of(&head)?.table(&table)?, &cols, predicate.as_deref())?;
            let view = db.create_view(&base, def, Frequency::parse(&freq)?, parse_conditions(&conditions)?)?;
            println!("{view}");
        }
        Cmd::Sync(SyncCmd::Attach {
            from,
            to,
            direction,
            freq,
            conditions,
        }) => {
            let id = db.attach_sync(
                &from,
                &to,
                SyncDirection::parse(&direction)?,
                TransformOp::Identity,
                parse_conditions(&conditions)?,
                Frequency::parse(&freq)?,
            )?;
            println!("{id}");
        }
        Cmd::Sync(SyncCmd::Now { edge }) => db.sync_now(&edge)?,
        Cmd::Sync(SyncCmd::List) => {
            for e in db.edges() {
                let state = match &e.state {
                    EdgeState::Active => "active".to_string(),
                    EdgeState::Disassociated(r) => format!("disassociated: {r}"),
                };
                let dir = match e.direction {
                    SyncDirection::Unidirectional => "uni",
                    SyncDirection::Bidirectional => "bi",
                };
                println!(
                    "{}\t{}\t{}\t{dir}\t{}\t{}\tpending={}",
                    e.id,
                    e.source,
                    e.target,
                    e.frequency,
                    state,
                    e.pending.len()
                );
            }
        }
        Cmd::Tick { to } => {
            let now = match to.strip_prefix('+') {
                Some(d) => db.now() + parse_u64(d)?,
                None => parse_u64(&to)?,
            };
            db.tick(now)?;
            println!("{now}");
        }
        Cmd::Alerts => {
            for a in db.alerts() {
                println!("{}\t{}\t{}", a.tick, a.edge, a.reason);
            }
        }
        Cmd::Stats { rescan } => {
            let s = if rescan { db.store().rescan_stats()? } else { db.stats() };
            println!("unique_chunks\t{}", s.unique_chunks);
            println!("total_bytes\t{}", s.total_bytes);
            println!("virtual_chunks\t{}", s.virtual_chunks);
        }
    }
    Ok(())
}

fn parse_u64(s: &str) -> Result<u64> {
    s.parse().map_err(|_| Error::Parse(format!("expected a tick count, got {s:?}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ldb: {e}");
            ExitCode::from(1)
        }
    }
}
