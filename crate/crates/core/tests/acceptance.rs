//! End-to-end acceptance suite. Every criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails or exceeds its time budget.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};

use livedb::bench::{
    grouping_reduction, run_experiment, snapshot_bytes, Experiment, ExperimentReport, ReportLine, Scale,
};
use livedb::graph::CommitOptions;
use livedb::prolly::{self, build, build_root, LeafFormat, Mutation};
use livedb::relation::{Column, ColumnType, DatabaseSchema, TableSchema, Tuple, Value};
use livedb::schema_evolution::{classify, SchemaChangeKind, SchemaTransform, TransformOp};
use livedb::{
    ChunkStore, ChunkingPolicy, Condition, Database, EdgeKind, Entry, Error, Frequency, RowOp, SchemaChangeOp,
    SchemaChangeOptions, SchemaSync, SyncCapability, SyncDirection, SyncRole, ViewDef,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<T>(r: livedb::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- fixtures

struct Experiments {
    e1: ExperimentReport,
    e1_secs: f64,
    e2: ExperimentReport,
    e2_secs: f64,
    e3: ExperimentReport,
    e3_secs: f64,
}

fn run_experiments(out: &Path) -> Experiments {
    let timed = |e| {
        let t = Instant::now();
        let r = run_experiment(e, Scale::Desk, out).expect("experiment runs");
        (r, t.elapsed().as_secs_f64())
    };
    let (e1, e1_secs) = timed(Experiment::E1);
    let (e2, e2_secs) = timed(Experiment::E2);
    let (e3, e3_secs) = timed(Experiment::E3);
    Experiments {
        e1,
        e1_secs,
        e2,
        e2_secs,
        e3,
        e3_secs,
    }
}

fn line<'a>(r: &'a ExperimentReport, workload: &str, content: bool, layout: &str) -> Result<&'a ReportLine, String> {
    r.find(workload, content, layout)
        .ok_or_else(|| format!("report lacks {workload}/{content}/{layout}"))
}

fn small_schema() -> DatabaseSchema {
    DatabaseSchema::new(vec![TableSchema::new(
        "t",
        vec![
            Column::new("id", ColumnType::Int64),
            Column::new("a", ColumnType::Int64),
            Column::new("b", ColumnType::Int64),
            Column::new("s", ColumnType::Utf8).nullable(),
        ],
        "id",
    )])
    .unwrap()
}

fn random_row(rng: &mut StdRng, id: i64) -> Tuple {
    let s = if rng.random_bool(0.2) {
        Value::Null
    } else {
        Value::Str(format!("s{}", rng.random_range(0..50)))
    };
    Tuple::new(vec![
        Value::Int(id),
        Value::Int(rng.random_range(0..100)),
        Value::Int(rng.random_range(-50..50)),
        s,
    ])
}

/// Random valid ops against a model of live keys in `0..key_space`.
fn random_ops(rng: &mut StdRng, live: &mut BTreeSet<i64>, key_space: i64, n: usize) -> Vec<RowOp> {
    let mut touched = BTreeSet::new();
    let mut ops = Vec::new();
    for _ in 0..n {
        let k = rng.random_range(0..key_space);
        if !touched.insert(k) {
            continue;
        }
        if live.contains(&k) {
            if rng.random_bool(0.3) {
                live.remove(&k);
                ops.push(RowOp::Delete {
                    table: "t".into(),
                    key: Value::Int(k),
                });
            } else {
                let col = *["a", "b", "s"].choose(rng).unwrap();
                let v = match col {
                    "s" => Value::Str(format!("u{}", rng.random_range(0..50))),
                    _ => Value::Int(rng.random_range(0..100)),
                };
                ops.push(RowOp::Update {
                    table: "t".into(),
                    key: Value::Int(k),
                    set: vec![(col.to_string(), v)],
                });
            }
        } else {
            live.insert(k);
            ops.push(RowOp::Insert {
                table: "t".into(),
                row: random_row(rng, k),
            });
        }
    }
    ops
}

fn scan(db: &mut Database, target: &str, table: &str) -> Result<Vec<Tuple>, String> {
    e2s(db.scan(target, table, None, None))
}

// ---------------------------------------------------------------- 1..5

fn c1(x: &Experiments) -> Check {
    let c = line(&x.e1, "localized", true, "row")?;
    let k = line(&x.e1, "localized", false, "row")?;
    let ratio = c.unique_chunks as f64 / k.unique_chunks as f64;
    let means = (c.mean_chunk_entries - k.mean_chunk_entries).abs() / k.mean_chunk_entries;
    ensure(means < 0.15, || format!("mean chunk sizes differ by {:.1}%", means * 100.0))?;
    ensure(ratio <= 0.8, || format!("content/capacity chunks = {ratio:.3} > 0.8"))?;
    Ok(format!(
        "chunks content {} vs capacity {} (ratio {ratio:.3}); mean entries {:.1} vs {:.1}",
        c.unique_chunks, k.unique_chunks, c.mean_chunk_entries, k.mean_chunk_entries
    ))
}

fn c2(x: &Experiments) -> Check {
    let c = line(&x.e1, "uniform", true, "row")?;
    let k = line(&x.e1, "uniform", false, "row")?;
    ensure(c.total_bytes >= k.total_bytes, || {
        format!("content {} B < capacity {} B", c.total_bytes, k.total_bytes)
    })?;
    Ok(format!("bytes content {} >= capacity {}", c.total_bytes, k.total_bytes))
}

fn c3(x: &Experiments) -> Check {
    let c = line(&x.e1, "append", true, "row")?;
    let db = e2s(Database::open(&c.root))?;
    let head = e2s(db.branch("main"))?.head;
    let final_bytes = e2s(snapshot_bytes(&db, &head))?;
    let ratio = c.total_bytes as f64 / final_bytes as f64;
    ensure(ratio <= 3.0, || format!("stored/final = {ratio:.2} > 3"))?;
    Ok(format!("stored {} B, final snapshot {} B, ratio {ratio:.2}", c.total_bytes, final_bytes))
}

fn c4(x: &Experiments) -> Check {
    let c = line(&x.e2, "mixed-x5", true, "row")?;
    let k = line(&x.e2, "mixed-x5", false, "row")?;
    let rc = c.unique_chunks as f64 / k.unique_chunks as f64;
    let rb = c.total_bytes as f64 / k.total_bytes as f64;
    let db = e2s(Database::open(&c.root))?;
    let branches = db.branches().filter(|b| b.name != "main").count();
    ensure(branches == 5, || format!("{branches} branches"))?;
    ensure(rc <= 0.75 && rb <= 0.75, || format!("chunk ratio {rc:.3}, byte ratio {rb:.3} (need <= 0.75)"))?;
    Ok(format!("5 branches; chunk ratio {rc:.3}, byte ratio {rb:.3}"))
}

fn c5(x: &Experiments) -> Check {
    let rc = grouping_reduction(&x.e3, true).ok_or("missing content lines")?;
    let rk = grouping_reduction(&x.e3, false).ok_or("missing capacity lines")?;
    ensure(rk >= 0.05, || format!("capacity reduction {:.1}% < 5%", rk * 100.0))?;
    ensure(rc >= 0.15, || format!("content reduction {:.1}% < 15%", rc * 100.0))?;
    ensure(rc > rk, || format!("content {:.2}% <= capacity {:.2}%", rc * 100.0, rk * 100.0))?;
    Ok(format!("reduction content {:.1}%, capacity {:.1}%", rc * 100.0, rk * 100.0))
}

// ---------------------------------------------------------------- 6

fn key(i: u32) -> Vec<u8> {
    i.to_be_bytes().to_vec()
}

fn apply_model(store: &ChunkStore, tree: &prolly::TreeRef, batch: &BTreeMap<Vec<u8>, Option<Vec<u8>>>, model: &mut BTreeMap<Vec<u8>, Vec<u8>>) -> Result<prolly::TreeRef, String> {
    let muts: Vec<Mutation> = batch
        .iter()
        .map(|(k, v)| match (v, model.contains_key(k)) {
            (Some(v), true) => Mutation::update(k.clone(), v.clone()),
            (Some(v), false) => Mutation::insert(k.clone(), v.clone()),
            (None, _) => Mutation::delete(k.clone()),
        })
        .collect();
    for (k, v) in batch {
        match v {
            Some(v) => model.insert(k.clone(), v.clone()),
            None => model.remove(k),
        };
    }
    e2s(prolly::apply(store, tree, &muts))
}

fn entries(model: &BTreeMap<Vec<u8>, Vec<u8>>) -> Vec<Entry> {
    model.iter().map(|(k, v)| Entry::new(k.clone(), v.clone())).collect()
}

fn c6() -> Check {
    let mut rng = StdRng::seed_from_u64(6);
    let mut checks = 0;
    for policy in [ChunkingPolicy::content(16), ChunkingPolicy::capacity(16)] {
        let store = ChunkStore::in_memory();
        let mut model: BTreeMap<Vec<u8>, Vec<u8>> = (0..1000u32).map(|i| (key(i * 4), format!("v{i}").into_bytes())).collect();
        let mut tree = e2s(build(&store, &entries(&model), &policy, &LeafFormat::Raw))?;
        for round in 0..200 {
            let mut batch = BTreeMap::new();
            for _ in 0..rng.random_range(1..40) {
                let k = key(rng.random_range(0..4400));
                let v = if model.contains_key(&k) && rng.random_bool(0.4) {
                    None
                } else if !model.contains_key(&k) && rng.random_bool(0.1) {
                    continue;
                } else {
                    Some(format!("r{round}-{}", rng.random_range(0..1000)).into_bytes())
                };
                batch.insert(k, v);
            }
            tree = apply_model(&store, &tree, &batch, &mut model)?;
            let expect = e2s(build_root(&entries(&model), &policy, &LeafFormat::Raw))?;
            ensure(tree.root == expect, || format!("{policy}: round {round} root differs from rebuild"))?;
            checks += 1;
        }
        // one logical edit set, applied in two different orders and batchings
        let base = model.clone();
        let base_tree = tree.clone();
        let mut edits: Vec<(Vec<u8>, Option<Vec<u8>>)> = (0..300)
            .map(|i| {
                let k = key(rng.random_range(0..4400));
                let v = (!base.contains_key(&k) || rng.random_bool(0.6)).then(|| format!("p{i}").into_bytes());
                (k, v)
            })
            .collect::<BTreeMap<_, _>>()
            .into_iter()
            .collect();
        let mut finals = Vec::new();
        for _ in 0..2 {
            edits.shuffle(&mut rng);
            let mut m = base.clone();
            let mut t = base_tree.clone();
            let mut i = 0;
            while i < edits.len() {
                let n = rng.random_range(1..50).min(edits.len() - i);
                let batch: BTreeMap<_, _> = edits[i..i + n].iter().cloned().collect();
                t = apply_model(&store, &t, &batch, &mut m)?;
                i += n;
            }
            finals.push(t.root);
        }
        ensure(finals[0] == finals[1], || format!("{policy}: permutations diverge"))?;
    }
    Ok(format!("{checks} batch roots equal rebuilds; permuted edit sets converge"))
}

// ---------------------------------------------------------------- 7

fn c7() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = StdRng::seed_from_u64(7);
    let grouped = small_schema().tables["t"].clone().with_groups(vec![vec!["a", "b"], vec!["s"]]);
    let schema = DatabaseSchema::new(vec![grouped]).unwrap();
    let policy = ChunkingPolicy::content(16);
    let rows: Vec<RowOp> = (0..3000)
        .map(|i| RowOp::Insert {
            table: "t".into(),
            row: random_row(&mut rng, i),
        })
        .collect();
    let mut lazy_db = e2s(Database::init(dir.path().join("lazy"), schema.clone(), policy))?;
    let mut eager_db = e2s(Database::in_memory(schema, policy))?;
    e2s(lazy_db.commit("main", &rows))?;
    e2s(eager_db.commit("main", &rows))?;

    let before = lazy_db.stats();
    for i in 0..3 {
        e2s(lazy_db.create_branch(&format!("clone{i}"), "main"))?;
    }
    let after = e2s(lazy_db.store().rescan_stats())?;
    ensure((after.unique_chunks, after.total_bytes) == (before.unique_chunks, before.total_bytes), || {
        format!("branching wrote data: {before:?} -> {after:?}")
    })?;

    let ops = [
        SchemaChangeOp::add_column("t", Column::new("c", ColumnType::Int64).with_default(Value::Int(7))),
        SchemaChangeOp::rename_column("t", "a", "alpha"),
        SchemaChangeOp::drop_column("t", "s"),
        SchemaChangeOp::regroup("t", vec![vec!["a".into(), "s".into()], vec!["b".into()]]),
    ];
    for (i, op) in ops.iter().enumerate() {
        let name = format!("v{i}");
        let before = lazy_db.stats();
        let opts = |lazy| SchemaChangeOptions {
            lazy,
            new_name: Some(name.clone()),
            ..Default::default()
        };
        e2s(lazy_db.apply_schema_change("main", op.clone(), opts(true)))?;
        let mid = lazy_db.stats();
        ensure((mid.unique_chunks, mid.total_bytes) == (before.unique_chunks, before.total_bytes), || {
            format!("lazy {op} wrote data")
        })?;
        e2s(eager_db.apply_schema_change("main", op.clone(), opts(false)))?;
        let lazy_rows = scan(&mut lazy_db, &name, "t")?;
        ensure(lazy_rows == scan(&mut eager_db, &name, "t")?, || format!("{op}: rows differ"))?;
        let ids = |db: &Database| -> Result<BTreeSet<livedb::ChunkId>, String> {
            let head = e2s(db.branch(&name))?.head;
            let t = e2s(db.schema_of(&head))?.table("t").unwrap().clone();
            let mut out = BTreeSet::new();
            for (gi, root) in e2s(db.snapshot(&head))?.tables["t"].iter().enumerate() {
                let tree = e2s(prolly::open(db.store(), root, db.policy(), &LeafFormat::Columnar(t.group_shape(gi))))?;
                out.extend(e2s(prolly::reachable_chunks(db.store(), &tree))?);
            }
            Ok(out)
        };
        let (l, e) = (ids(&lazy_db)?, ids(&eager_db)?);
        ensure(l == e, || format!("{op}: lazy chunks differ from eager"))?;
        for id in &l {
            let lazy_bytes = e2s(lazy_db.store().materialize(id))?.1;
            let eager_bytes = e2s(eager_db.store().materialize(id))?.1;
            ensure(lazy_bytes == eager_bytes, || format!("{op}: chunk {id} bytes differ"))?;
        }
    }
    Ok("branching and 4 lazy schema changes wrote no data; lazy reads match eager chunk for chunk".into())
}

// ---------------------------------------------------------------- 8

#[derive(Default)]
struct RoleOracle {
    edges: Vec<(String, String, bool)>,
}

impl RoleOracle {
    fn role(&self, b: &str) -> SyncRole {
        if self.edges.iter().any(|(_, t, bi)| !bi && t == b) {
            SyncRole::UniTarget
        } else if self.edges.iter().any(|(s, t, bi)| *bi && (s == b || t == b)) {
            SyncRole::BiPeer
        } else {
            SyncRole::Free
        }
    }

    fn reaches(&self, from: &str, to: &str) -> bool {
        let mut seen = HashSet::new();
        let mut stack = vec![from.to_string()];
        while let Some(b) = stack.pop() {
            if b == to {
                return true;
            }
            if !seen.insert(b.clone()) {
                continue;
            }
            for (s, t, bi) in &self.edges {
                if *s == b {
                    stack.push(t.clone());
                }
                if *bi && *t == b {
                    stack.push(s.clone());
                }
            }
        }
        false
    }

    fn may_attach(&self, s: &str, t: &str, bi: bool) -> bool {
        if s == t || self.reaches(t, s) {
            return false;
        }
        if bi {
            self.role(s) != SyncRole::UniTarget && self.role(t) != SyncRole::UniTarget
        } else {
            self.role(t) == SyncRole::Free
        }
    }
}

fn c8() -> Check {
    let mut rng = StdRng::seed_from_u64(8);
    let (mut violations, mut false_rejections, mut accepted, mut rejected) = (0, 0, 0, 0);
    let mut tally = |legal: bool, result: &Result<(), Error>| match (legal, result) {
        (true, Ok(())) => accepted += 1,
        (false, Err(_)) => rejected += 1,
        (false, Ok(())) => violations += 1,
        (true, Err(_)) => false_rejections += 1,
    };
    let mut next_key = 0i64;
    for _ in 0..100 {
        let mut db = e2s(Database::in_memory(small_schema(), ChunkingPolicy::content(8)))?;
        let mut oracle = RoleOracle::default();
        let mut names = vec!["main".to_string()];
        for step in 0..40 {
            let b = names.choose(&mut rng).unwrap().clone();
            match rng.random_range(0..10) {
                0 | 1 => {
                    let name = format!("b{step}");
                    e2s(db.create_branch(&name, &b))?;
                    names.push(name);
                }
                2..=4 => {
                    next_key += 1;
                    let op = RowOp::Insert {
                        table: "t".into(),
                        row: random_row(&mut rng, next_key),
                    };
                    let r = db.commit(&b, &[op]).map(|_| ());
                    let legal = oracle.role(&b) != SyncRole::UniTarget;
                    if let Err(e) = &r {
                        ensure(matches!(e, Error::SyncTargetImmutable(_)), || format!("unexpected {e}"))?;
                    }
                    tally(legal, &r);
                }
                5 => {
                    let log = e2s(db.log(&b))?;
                    if log.len() < 2 {
                        continue;
                    }
                    let stale = log[rng.random_range(0..log.len() - 1)].0;
                    next_key += 1;
                    let op = RowOp::Insert {
                        table: "t".into(),
                        row: random_row(&mut rng, next_key),
                    };
                    let opts = CommitOptions {
                        expected_head: Some(stale),
                        ..Default::default()
                    };
                    let r = db.commit_with(&b, &[op], opts).map(|_| ());
                    tally(false, &r);
                }
                _ => {
                    let t = names.choose(&mut rng).unwrap().clone();
                    let bi = rng.random_bool(0.5);
                    let dir = if bi { SyncDirection::Bidirectional } else { SyncDirection::Unidirectional };
                    let legal = oracle.may_attach(&b, &t, bi);
                    let r = db
                        .attach_sync(&b, &t, dir, TransformOp::Identity, vec![], Frequency::Immediate)
                        .map(|_| ());
                    if let Err(e) = &r {
                        ensure(matches!(e, Error::IllegalSyncTopology(_)), || format!("unexpected {e}"))?;
                    }
                    if r.is_ok() {
                        oracle.edges.push((b.clone(), t.clone(), bi));
                    }
                    tally(legal, &r);
                }
            }
        }
        for n in &names {
            ensure(db.role(n) == oracle.role(n), || format!("role of {n} disagrees with oracle"))?;
        }
        ensure(db.audit_acyclic(), || "snapshot graph has a cycle".into())?;
    }
    ensure(violations == 0 && false_rejections == 0, || {
        format!("{violations} violations admitted, {false_rejections} false rejections")
    })?;
    Ok(format!("{accepted} legal ops accepted, {rejected} illegal ops rejected, 0 disagreements"))
}

// ---------------------------------------------------------------- 9

fn c9() -> Check {
    let mut rng = StdRng::seed_from_u64(9);
    let modes = [Frequency::Deferred, Frequency::OnDemand, Frequency::Periodic(3)];
    for trial in 0..50 {
        let mut live = BTreeSet::new();
        let script: Vec<Vec<RowOp>> = (0..rng.random_range(3..12))
            .map(|_| {
                let n = rng.random_range(1..15);
                random_ops(&mut rng, &mut live, 60, n)
            })
            .collect();
        let run = |freq: Frequency| -> Result<Vec<Tuple>, String> {
            let mut db = e2s(Database::in_memory(small_schema(), ChunkingPolicy::content(8)))?;
            e2s(db.create_branch("mirror", "main"))?;
            let edge = e2s(db.attach_sync("main", "mirror", SyncDirection::Unidirectional, TransformOp::Identity, vec![], freq))?;
            for ops in &script {
                e2s(db.commit("main", ops))?;
                let now = db.now() + 1;
                e2s(db.tick(now))?;
            }
            match freq {
                Frequency::OnDemand => e2s(db.sync_now(&edge))?,
                Frequency::Periodic(p) => {
                    let now = db.now() + p;
                    e2s(db.tick(now))?;
                }
                _ => {}
            }
            let rows = scan(&mut db, "mirror", "t")?;
            ensure(rows == scan(&mut db, "main", "t")?, || "mirror differs from its source".into())?;
            Ok(rows)
        };
        let reference = run(Frequency::Immediate)?;
        for f in modes {
            ensure(run(f)? == reference, || format!("trial {trial}: {f} differs from immediate"))?;
        }

        // blocked condition
        let mut db = e2s(Database::in_memory(small_schema(), ChunkingPolicy::content(8)))?;
        let seed: Vec<RowOp> = (0..40).map(|i| RowOp::Insert { table: "t".into(), row: random_row(&mut rng, i) }).collect();
        e2s(db.commit("main", &seed))?;
        e2s(db.create_branch("mirror", "main"))?;
        let limit = rng.random_range(2..8u64);
        let cond = e2s(Condition::parse(&format!("rows={limit}")))?;
        e2s(db.attach_sync("main", "mirror", SyncDirection::Unidirectional, TransformOp::Identity, vec![cond], Frequency::Immediate))?;
        let mut live: BTreeSet<i64> = (0..40).collect();
        let mut blocked = false;
        for _ in 0..6 {
            let ops = { let n = rng.random_range(1..12); random_ops(&mut rng, &mut live, 80, n) };
            let mirror_before = e2s(db.branch("mirror"))?.head;
            e2s(db.commit("main", &ops))?;
            let big = ops.len() as u64 > limit;
            if !blocked && big {
                blocked = true;
                ensure(e2s(db.branch("mirror"))?.head == mirror_before, || "blocked change reached target".into())?;
            }
            ensure(db.alerts().len() == usize::from(blocked), || format!("{} alerts", db.alerts().len()))?;
            ensure(db.role("mirror") == if blocked { SyncRole::Free } else { SyncRole::UniTarget }, || "role".into())?;
        }

        // bidirectional identity, no echo
        let mut db = e2s(Database::in_memory(small_schema(), ChunkingPolicy::content(8)))?;
        e2s(db.create_branch("peer", "main"))?;
        e2s(db.attach_sync("main", "peer", SyncDirection::Bidirectional, TransformOp::Identity, vec![], Frequency::Immediate))?;
        let mut live = BTreeSet::new();
        for _ in 0..8 {
            let side = if rng.random_bool(0.5) { "main" } else { "peer" };
            let ops = { let n = rng.random_range(1..8); random_ops(&mut rng, &mut live, 50, n) };
            let before = db.snapshots().count();
            e2s(db.commit(side, &ops))?;
            ensure(db.snapshots().count() == before + 2, || "echo or lost propagation".into())?;
            ensure(scan(&mut db, "main", "t")? == scan(&mut db, "peer", "t")?, || "peers diverged".into())?;
        }
    }
    Ok("50 trials: deferred/ondemand/periodic equal immediate; blocks alert once; bi peers converge without echo".into())
}

// ---------------------------------------------------------------- 10

#[derive(Clone, Copy)]
enum Op {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

fn holds(op: Op, v: i64, c: i64) -> bool {
    match op {
        Op::Eq => v == c,
        Op::Ne => v != c,
        Op::Lt => v < c,
        Op::Le => v <= c,
        Op::Gt => v > c,
        Op::Ge => v >= c,
    }
}

fn c10() -> Check {
    let mut rng = StdRng::seed_from_u64(10);
    let symbols = [(Op::Eq, "="), (Op::Ne, "!="), (Op::Lt, "<"), (Op::Le, "<="), (Op::Gt, ">"), (Op::Ge, ">=")];
    let mut reads = 0;
    for trial in 0..100 {
        let mut db = e2s(Database::in_memory(small_schema(), ChunkingPolicy::content(8)))?;
        let mut live = BTreeSet::new();
        let ops = { let n = rng.random_range(20..80); random_ops(&mut rng, &mut live, 200, n) };
        e2s(db.commit("main", &ops))?;
        let mut cols = vec!["id"];
        cols.extend(["a", "b", "s"].into_iter().filter(|_| rng.random_bool(0.6)));
        let preds: Vec<(&str, Op, &str, i64)> = (0..rng.random_range(0..3))
            .map(|_| {
                let (op, sym) = *symbols.choose(&mut rng).unwrap();
                let col = *["a", "b"].choose(&mut rng).unwrap();
                (col, op, sym, rng.random_range(-20..100))
            })
            .collect();
        let text = preds.iter().map(|(c, _, s, v)| format!("{c}{s}{v}")).collect::<Vec<_>>().join(" and ");
        let base = small_schema().tables["t"].clone();
        let def = e2s(ViewDef::parse("v", &base, &cols, Some(&text)))?;
        let freq = if rng.random_bool(0.5) { Frequency::Immediate } else { Frequency::Deferred };
        e2s(db.create_view("main", def, freq, vec![]))?;
        let mut history: Vec<(livedb::SnapshotId, Vec<Tuple>, Vec<Vec<u8>>)> = Vec::new();
        for step in 0..6 {
            if step > 0 {
                let ops = { let n = rng.random_range(1..20); random_ops(&mut rng, &mut live, 200, n) };
                e2s(db.commit("main", &ops))?;
            }
            let got = scan(&mut db, "v", "v")?;
            let head = e2s(db.branch("v"))?.head;
            let vt = e2s(db.schema_of(&head))?.table("v").unwrap().clone();
            let idx: Vec<usize> = vt.columns.iter().map(|c| base.column_index(&c.name).unwrap()).collect();
            let expect: Vec<Tuple> = scan(&mut db, "main", "t")?
                .into_iter()
                .filter(|r| {
                    preds.iter().all(|(c, op, _, v)| match &r.values[base.column_index(c).unwrap()] {
                        Value::Int(x) => holds(*op, *x, *v),
                        _ => false,
                    })
                })
                .map(|r| Tuple::new(idx.iter().map(|&i| r.values[i].clone()).collect()))
                .collect();
            ensure(got == expect, || format!("trial {trial} step {step}: view differs from filter/project of base ({text})"))?;
            let roots = e2s(db.snapshot(&head))?.tables["v"]
                .iter()
                .map(|id| e2s(db.store().materialize(id)).map(|(_, b)| b.to_vec()))
                .collect::<Result<Vec<_>, _>>()?;
            history.push((head, got, roots));
            reads += 1;
        }
        for (snap, rows, roots) in &history {
            ensure(&e2s(db.scan_at(snap, "v", None, None))? == rows, || "historical view changed".into())?;
            let now = e2s(db.snapshot(snap))?.tables["v"]
                .iter()
                .map(|id| e2s(db.store().materialize(id)).map(|(_, b)| b.to_vec()))
                .collect::<Result<Vec<_>, _>>()?;
            ensure(&now == roots, || "historical view bytes changed".into())?;
        }
    }
    Ok(format!("100 trials, {reads} view reads equal recomputation; history byte-stable"))
}

// ---------------------------------------------------------------- 11

fn c11() -> Check {
    let mut rng = StdRng::seed_from_u64(11);
    let old = TableSchema::new(
        "t",
        vec![
            Column::new("id", ColumnType::Int64),
            Column::new("a", ColumnType::Int64),
            Column::new("b", ColumnType::Int64),
            Column::new("s", ColumnType::Utf8).nullable(),
            Column::new("x", ColumnType::Float64).with_default(Value::Float(1.5)),
        ],
        "id",
    );
    let rows: Vec<Tuple> = (0..1000)
        .map(|i| {
            let s = if rng.random_bool(0.3) { Value::Null } else { Value::Str(format!("s{i}")) };
            Tuple::new(vec![
                Value::Int(i),
                Value::Int(rng.random_range(-1000..1000)),
                Value::Int(rng.random()),
                s,
                Value::Float(rng.random_range(0..1000) as f64 / 4.0),
            ])
        })
        .collect();
    let catalog = [
        SchemaChangeOp::add_column("t", Column::new("c", ColumnType::Int64).with_default(Value::Int(0))),
        SchemaChangeOp::add_column("t", Column::new("n", ColumnType::Utf8).nullable()),
        SchemaChangeOp::drop_column("t", "s"),
        SchemaChangeOp::drop_column("t", "x"),
        SchemaChangeOp::rename_column("t", "a", "alpha"),
        SchemaChangeOp::regroup("t", vec![vec!["a".into(), "s".into()], vec!["b".into(), "x".into()]]),
    ];
    for op in &catalog {
        ensure(e2s(classify(op, &old))? == SyncCapability::Bidirectional, || format!("{op} not bidirectional"))?;
        let tr = e2s(SchemaTransform::new(op.clone(), old.clone()))?;
        for r in &rows {
            let fwd = e2s(tr.forward(r))?;
            let (lhs, rhs) = match op.kind {
                // the dropped column cannot come back; the exact law holds from the new side
                SchemaChangeKind::DropColumn(_) => (e2s(tr.forward(&e2s(tr.reverse(&fwd))?))?, fwd),
                _ => (e2s(tr.reverse(&fwd))?, r.clone()),
            };
            ensure(lhs == rhs, || format!("{op}: round trip changed row {:?}", r.values[0]))?;
        }
    }
    let ro = SchemaChangeOp::add_column("t", Column::new("c", ColumnType::Utf8));
    ensure(e2s(classify(&ro, &old))? == SyncCapability::ReverseOnly, || "reverse-only classification".into())?;

    // bidirectional visibility across schema versions
    let mut db = e2s(Database::in_memory(small_schema(), ChunkingPolicy::content(8)))?;
    let seed: Vec<RowOp> = (0..20).map(|i| RowOp::Insert { table: "t".into(), row: random_row(&mut rng, i) }).collect();
    e2s(db.commit("main", &seed))?;
    let op = SchemaChangeOp::add_column("t", Column::new("c", ColumnType::Int64).with_default(Value::Int(7)));
    let opts = SchemaChangeOptions {
        sync: Some(SchemaSync::Bidirectional),
        ..Default::default()
    };
    let new = e2s(db.apply_schema_change("main", op, opts))?;
    let old_row = random_row(&mut rng, 100);
    e2s(db.commit("main", &[RowOp::Insert { table: "t".into(), row: old_row.clone() }]))?;
    let mut expect = old_row.values.clone();
    expect.push(Value::Int(7));
    ensure(e2s(db.get(&new, "t", &Value::Int(100)))? == Some(Tuple::new(expect)), || "old-chain insert not visible on new chain".into())?;
    let mut new_vals = random_row(&mut rng, 101).values;
    new_vals.push(Value::Int(42));
    e2s(db.commit(&new, &[RowOp::Insert { table: "t".into(), row: Tuple::new(new_vals.clone()) }]))?;
    ensure(
        e2s(db.get("main", "t", &Value::Int(101)))? == Some(Tuple::new(new_vals[..4].to_vec())),
        || "new-chain insert not visible on old chain".into(),
    )?;
    let a: Vec<Tuple> = scan(&mut db, "main", "t")?;
    let b: Vec<Tuple> = scan(&mut db, &new, "t")?;
    ensure(a.len() == b.len(), || "chains diverged".into())?;

    // reverse-only: old readers follow the new chain, old chain frozen
    let mut db = e2s(Database::in_memory(small_schema(), ChunkingPolicy::content(8)))?;
    let opts = SchemaChangeOptions {
        sync: Some(SchemaSync::Reverse),
        ..Default::default()
    };
    let new = e2s(db.apply_schema_change("main", ro, opts))?;
    let mut vals = random_row(&mut rng, 5).values;
    vals.push(Value::Str("secret".into()));
    e2s(db.commit(&new, &[RowOp::Insert { table: "t".into(), row: Tuple::new(vals.clone()) }]))?;
    ensure(
        e2s(db.get("main", "t", &Value::Int(5)))? == Some(Tuple::new(vals[..4].to_vec())),
        || "reverse sync did not reach the old chain".into(),
    )?;
    let direct = db.commit("main", &[RowOp::Insert { table: "t".into(), row: random_row(&mut rng, 6) }]);
    ensure(matches!(direct, Err(Error::SyncTargetImmutable(_))), || "old chain accepted a commit".into())?;
    Ok(format!("{} ops x 1000 rows round-trip; bi and reverse-only visibility hold", catalog.len()))
}

// ---------------------------------------------------------------- 12

/// Counts chunk files directly: `(data chunks, data payload bytes)`.
fn walk_tally(root: &Path) -> (u64, u64) {
    let (mut n, mut bytes) = (0, 0);
    for shard in fs::read_dir(root.join("chunks")).unwrap() {
        for f in fs::read_dir(shard.unwrap().path()).unwrap() {
            let data = fs::read(f.unwrap().path()).unwrap();
            assert_eq!(&data[..4], b"LDC1");
            if data[4] != 2 {
                n += 1;
                bytes += data.len() as u64 - 13;
            }
        }
    }
    (n, bytes)
}

struct Answers {
    digest: String,
    stats: livedb::StoreStats,
    log: String,
    diff: String,
    blame: String,
}

fn answers(db: &Database) -> Result<Answers, String> {
    let log = e2s(db.log("main"))?;
    let first = log.first().unwrap().0;
    let last = log.last().unwrap().0;
    Ok(Answers {
        digest: db.state_digest(),
        stats: db.stats(),
        log: format!("{log:?}"),
        diff: format!("{:?}", e2s(db.diff_snapshots(&first, &last))?),
        blame: format!("{:?}", e2s(db.blame("main", "t", &Value::Int(3)))?),
    })
}

fn c12(x: &Experiments) -> Check {
    let mut stores = 0;
    for report in [&x.e1, &x.e2, &x.e3] {
        for l in &report.lines {
            let db = e2s(Database::open(&l.root))?;
            let s = db.stats();
            ensure((s.unique_chunks, s.total_bytes) == (l.unique_chunks, l.total_bytes), || {
                format!("{}: reopened stats differ from report", l.root.display())
            })?;
            ensure(walk_tally(&l.root) == (l.unique_chunks, l.total_bytes), || {
                format!("{}: directory walk disagrees with report", l.root.display())
            })?;
            ensure(db.state_digest() == e2s(Database::open(&l.root))?.state_digest(), || "replay is not deterministic".into())?;
            stores += 1;
        }
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = StdRng::seed_from_u64(12);
    let before = {
        let mut db = e2s(Database::init(dir.path(), small_schema(), ChunkingPolicy::content(8)))?;
        let mut live = BTreeSet::new();
        let seed: Vec<RowOp> = (0..50).map(|i| RowOp::Insert { table: "t".into(), row: random_row(&mut rng, i) }).collect();
        live.extend(0..50);
        e2s(db.commit("main", &seed))?;
        e2s(db.create_branch("dev", "main"))?;
        e2s(db.create_branch("mirror", "main"))?;
        e2s(db.attach_sync("main", "mirror", SyncDirection::Unidirectional, TransformOp::Identity, vec![], Frequency::Periodic(2)))?;
        let cond = e2s(Condition::parse("rows=3"))?;
        let base = small_schema().tables["t"].clone();
        e2s(db.create_view("main", e2s(ViewDef::parse("v", &base, &["id", "a"], Some("a>50")))?, Frequency::Deferred, vec![cond]))?;
        for i in 0..10 {
            let ops = random_ops(&mut rng, &mut live, 80, 1 + (i % 5));
            e2s(db.commit("main", &ops))?;
            let now = db.now() + 1;
            e2s(db.tick(now))?;
        }
        let dev_rows: Vec<RowOp> = (100..105).map(|i| RowOp::Insert { table: "t".into(), row: random_row(&mut rng, i) }).collect();
        e2s(db.commit("dev", &dev_rows))?;
        let op = SchemaChangeOp::add_column("t", Column::new("c", ColumnType::Int64).with_default(Value::Int(1)));
        e2s(db.apply_schema_change(
            "dev",
            op,
            SchemaChangeOptions {
                lazy: true,
                carry_name: true,
                sync: Some(SchemaSync::Bidirectional),
                ..Default::default()
            },
        ))?;
        scan(&mut db, "dev", "t")?;
        scan(&mut db, "v", "v")?;
        ensure(db.log("main").unwrap().iter().any(|(_, a)| a.as_ref().is_some_and(|a| a.kind == EdgeKind::Dml)), || "no commits".into())?;
        answers(&db)?
    };
    let db = e2s(Database::open(dir.path()))?;
    let after = answers(&db)?;
    ensure(before.digest == after.digest, || "graph differs after reopen".into())?;
    ensure(before.stats == after.stats, || format!("stats differ: {:?} vs {:?}", before.stats, after.stats))?;
    ensure(before.log == after.log && before.diff == after.diff && before.blame == after.blame, || {
        "log/diff/blame differ after reopen".into()
    })?;
    ensure(db.stats() == e2s(db.store().rescan_stats())?, || "index stats differ from rescan".into())?;
    Ok(format!("{stores} experiment stores match reports and a directory walk; scripted store replays identically"))
}

// ---------------------------------------------------------------- runner

fn main() {
    println!("running acceptance criteria");
    let out = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let x = run_experiments(out.path());
    let setup = t.elapsed().as_secs_f64();
    println!(
        "experiments ran in {setup:.1}s (E1 {:.1}s, E2 {:.1}s, E3 {:.1}s)",
        x.e1_secs, x.e2_secs, x.e3_secs
    );
    let content_means: Vec<f64> = x.e1.lines.iter().map(|l| l.mean_chunk_entries).collect();
    println!("E1 realized mean chunk entries: {content_means:?}");

    let mut results: Vec<(u32, &str, f64, f64, Check)> = Vec::new();
    let mut timed = |n: u32, name: &'static str, limit: f64, base: f64, f: &dyn Fn() -> Check| {
        let t = Instant::now();
        let r = f();
        results.push((n, name, limit, base + t.elapsed().as_secs_f64(), r));
    };
    timed(1, "E1 localized-update sharing", 60.0, x.e1_secs, &|| c1(&x));
    timed(2, "E1 uniform-update storage direction", 60.0, x.e1_secs, &|| c2(&x));
    timed(3, "E1 append-only overhead", 60.0, x.e1_secs, &|| c3(&x));
    timed(4, "E2 multi-branch sharing", 120.0, x.e2_secs, &|| c4(&x));
    timed(5, "E3 attribute grouping", 60.0, x.e3_secs, &|| c5(&x));
    timed(6, "history independence", 30.0, 0.0, &c6);
    timed(7, "zero-cost branches and lazy schema change", 10.0, 0.0, &c7);
    timed(8, "commit and topology rules", 30.0, 0.0, &c8);
    timed(9, "sync semantics", 60.0, 0.0, &c9);
    timed(10, "view equivalence", 60.0, 0.0, &c10);
    timed(11, "schema round trip and cross-version visibility", 30.0, 0.0, &c11);
    timed(12, "persistence replay", 30.0, 0.0, &|| c12(&x));

    let mut failed = 0;
    for (n, name, limit, secs, r) in &results {
        let (ok, detail) = match r {
            Ok(d) if secs < limit => (true, d.clone()),
            Ok(d) => (false, format!("{d}; too slow")),
            Err(e) => (false, e.clone()),
        };
        failed += usize::from(!ok);
        println!(
            "criterion {n:>2} {}: {name}: {detail} [{secs:.1}s / {limit:.0}s]",
            if ok { "PASS" } else { "FAIL" }
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all {} acceptance criteria passed", results.len());
}
