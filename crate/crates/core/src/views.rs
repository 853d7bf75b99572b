//! Select/project views over a single base table.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::chunk_store::Recipe;
use crate::error::{Error, Result};
use crate::graph::{Database, EdgeAnnotation, EdgeKind, TableDelta};
use crate::relation::{DatabaseSchema, TableSchema, Tuple, Value};
use crate::schema_evolution::TransformOp;
use crate::sync::{Condition, Frequency, SyncDirection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    fn holds(self, o: Ordering) -> bool {
        match self {
            CmpOp::Eq => o == Ordering::Equal,
            CmpOp::Ne => o != Ordering::Equal,
            CmpOp::Lt => o == Ordering::Less,
            CmpOp::Le => o != Ordering::Greater,
            CmpOp::Gt => o == Ordering::Greater,
            CmpOp::Ge => o != Ordering::Less,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub column: String,
    pub op: CmpOp,
    pub value: Value,
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.column, self.op.symbol(), self.value)
    }
}

/// Orders two non-null values of the same type.
fn compare(a: &Value, b: &Value) -> Option<Ordering> {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => Some(x.cmp(y)),
        (Value::Float(x), Value::Float(y)) => x.partial_cmp(y),
        (Value::Str(x), Value::Str(y)) => Some(x.cmp(y)),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewDef {
    pub name: String,
    pub base_table: String,
    /// Projected base columns; must include the primary key.
    pub columns: Vec<String>,
    /// Conjunction; empty means every row qualifies.
    pub predicate: Vec<Comparison>,
}

impl ViewDef {
    /// Parses `where` text such as `a>10 and c!=x`; literals are typed by
    /// the base column they compare against.
    pub fn parse(
        name: &str,
        base: &TableSchema,
        columns: &[&str],
        where_text: Option<&str>,
    ) -> Result<ViewDef> {
        let mut predicate = Vec::new();
        if let Some(text) = where_text.map(str::trim).filter(|t| !t.is_empty()) {
            for term in text.split(" and ").flat_map(|t| t.split("&&")) {
                predicate.push(parse_comparison(term.trim(), base)?);
            }
        }
        let def = ViewDef {
            name: name.to_string(),
            base_table: base.name.clone(),
            columns: columns.iter().map(|c| c.trim().to_string()).collect(),
            predicate,
        };
        def.validate(base)?;
        Ok(def)
    }

    pub fn validate(&self, base: &TableSchema) -> Result<()> {
        let err = |m: String| Err(Error::View(format!("view {}: {m}", self.name)));
        if self.name.is_empty() {
            return err("empty view name".into());
        }
        if base.name != self.base_table {
            return err(format!("base table is {}, not {}", self.base_table, base.name));
        }
        if !self.columns.contains(&base.primary_key) {
            return err(format!("primary key {} must be projected", base.primary_key));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.columns {
            if base.column(c).is_none() {
                return err(format!("unknown column {c}"));
            }
            if !seen.insert(c) {
                return err(format!("column {c} projected twice"));
            }
        }
        for cmp in &self.predicate {
            let Some(col) = base.column(&cmp.column) else {
                return err(format!("predicate names unknown column {}", cmp.column));
            };
            if cmp.value.type_of() != Some(col.ty) {
                return err(format!("literal {} does not match column {}", cmp.value, col.name));
            }
        }
        Ok(())
    }

    /// Schema of the view relation: one group, columns in projection order.
    pub fn view_schema(&self, base: &TableSchema) -> TableSchema {
        let columns = self
            .columns
            .iter()
            .map(|c| base.column(c).expect("validated").clone())
            .collect();
        TableSchema::new(&self.name, columns, &base.primary_key)
    }

    /// SQL-style: comparisons against null never hold.
    pub fn matches(&self, base: &TableSchema, t: &Tuple) -> bool {
        self.predicate.iter().all(|c| {
            let v = &t.values[base.column_index(&c.column).expect("validated")];
            compare(v, &c.value).is_some_and(|o| c.op.holds(o))
        })
    }

    pub fn project(&self, base: &TableSchema, t: &Tuple) -> Tuple {
        Tuple::new(
            self.columns
                .iter()
                .map(|c| t.values[base.column_index(c).expect("validated")].clone())
                .collect(),
        )
    }

    /// Filter and project a full base row set.
    pub fn evaluate(&self, base: &TableSchema, rows: &[Tuple]) -> Vec<Tuple> {
        rows.iter()
            .filter(|t| self.matches(base, t))
            .map(|t| self.project(base, t))
            .collect()
    }
}

impl fmt::Display for ViewDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} on {} cols {}", self.name, self.base_table, self.columns.join(","))?;
        if !self.predicate.is_empty() {
            let p: Vec<String> = self.predicate.iter().map(|c| c.to_string()).collect();
            write!(f, " where {}", p.join(" and "))?;
        }
        Ok(())
    }
}

fn parse_comparison(term: &str, base: &TableSchema) -> Result<Comparison> {
    // two-character operators first so `<=` is not read as `<`
    const OPS: [(&str, CmpOp); 7] = [
        ("!=", CmpOp::Ne),
        ("<>", CmpOp::Ne),
        ("<=", CmpOp::Le),
        (">=", CmpOp::Ge),
        ("=", CmpOp::Eq),
        ("<", CmpOp::Lt),
        (">", CmpOp::Gt),
    ];
    for (sym, op) in OPS {
        if let Some(at) = term.find(sym) {
            let column = term[..at].trim();
            let literal = term[at + sym.len()..].trim();
            let col = base
                .column(column)
                .ok_or_else(|| Error::View(format!("predicate names unknown column {column}")))?;
            let value = Value::parse(literal, col.ty).map_err(|e| Error::View(e.to_string()))?;
            if value.is_null() {
                return Err(Error::View("comparisons against null are not supported".into()));
            }
            return Ok(Comparison {
                column: column.to_string(),
                op,
                value,
            });
        }
    }
    Err(Error::View(format!("cannot parse predicate term {term:?}")))
}

/// Maps a base-table delta onto the view.
pub fn view_delta(def: &ViewDef, base: &TableSchema, delta: &TableDelta) -> TableDelta {
    let mut out = TableDelta::default();
    for t in &delta.added {
        if def.matches(base, t) {
            out.added.push(def.project(base, t));
        }
    }
    for t in &delta.removed {
        if def.matches(base, t) {
            out.removed.push(def.project(base, t));
        }
    }
    for (old, new) in &delta.modified {
        match (def.matches(base, old), def.matches(base, new)) {
            (false, true) => out.added.push(def.project(base, new)),
            (true, false) => out.removed.push(def.project(base, old)),
            (true, true) => {
                let (po, pn) = (def.project(base, old), def.project(base, new));
                if po != pn {
                    out.modified.push((po, pn));
                }
            }
            (false, false) => {}
        }
    }
    out
}

impl Database {
    /// Creates a branch named after the view holding its contents, kept
    /// current by a unidirectional sync from `base_branch`. The contents are
    /// derived lazily on first read.
    pub fn create_view(
        &mut self,
        base_branch: &str,
        def: ViewDef,
        frequency: Frequency,
        conditions: Vec<Condition>,
    ) -> Result<String> {
        let head = self.branch(base_branch)?.head;
        let base = self.schema_of(&head)?.table(&def.base_table)?.clone();
        def.validate(&base)?;
        if self.branches.contains_key(&def.name) {
            return Err(Error::NameTaken(def.name.clone()));
        }
        let view = def.view_schema(&base);
        let digest = self.register_schema(&DatabaseSchema::new(vec![view.clone()])?)?;
        let transform = TransformOp::View {
            def: def.clone(),
            base: base.clone(),
        };
        let root = self.store.put_virtual(&Recipe {
            transform: transform.clone(),
            sources: self.snapshot(&head)?.tables[&base.name].clone(),
            source_groups: base.group_shapes(),
            group: view.group_shape(0),
            policy: self.policy,
        })?;
        let tick = self.next_tick();
        let annotation = EdgeAnnotation {
            kind: EdgeKind::ViewDefinition,
            description: def.to_string(),
            branch: base_branch.to_string(),
            actor: "user".into(),
            tick,
            summary: None,
            source: Some(head),
        };
        let tables = [(view.name.clone(), vec![root])].into_iter().collect();
        let snap = self.add_snapshot(&digest, tables, vec![(head, annotation.clone())], tick)?;
        self.create_branch_at(&def.name, snap, Some(annotation))?;
        self.attach_sync(
            base_branch,
            &def.name,
            SyncDirection::Unidirectional,
            transform,
            conditions,
            frequency,
        )?;
        Ok(def.name)
    }
}
