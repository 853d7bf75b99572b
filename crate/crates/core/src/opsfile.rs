//! Tab-separated row operations, one per line:
//!
//! ```text
//! insert<TAB>t<TAB>42<TAB>a=1,b=hello
//! update<TAB>t<TAB>42<TAB>b=bye
//! delete<TAB>t<TAB>42
//! ```
//!
//! Inserts may omit columns that have a fill value. A comma inside a string
//! value is kept when the text after it does not start with `name=`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{RowOp, TableDelta};
use crate::relation::{DatabaseSchema, TableSchema, Tuple, Value};

fn parse_assignments(text: &str, t: &TableSchema) -> Result<Vec<(String, Value)>> {
    let mut raw: Vec<(String, String)> = Vec::new();
    for piece in text.split(',') {
        match piece.split_once('=') {
            Some((name, v)) if t.column(name.trim()).is_some() => raw.push((name.trim().to_string(), v.to_string())),
            _ => match raw.last_mut() {
                Some((_, v)) => {
                    v.push(',');
                    v.push_str(piece);
                }
                None if piece.trim().is_empty() => {}
                None => return Err(Error::Parse(format!("expected col=value, got {piece:?}"))),
            },
        }
    }
    raw.into_iter()
        .map(|(name, v)| {
            let ty = t.column(&name).expect("checked above").ty;
            Ok((name, Value::parse(&v, ty)?))
        })
        .collect()
}

pub fn parse_line(line: &str, schema: &DatabaseSchema) -> Result<RowOp> {
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() < 3 {
        return Err(Error::Parse(format!("ops line needs op, table and key: {line:?}")));
    }
    let t = schema.table(f[1])?;
    let key = Value::parse(f[2], t.pk_type())?;
    let set = match f.get(3) {
        Some(s) => parse_assignments(s, t)?,
        None => Vec::new(),
    };
    let table = t.name.clone();
    match f[0] {
        "insert" => {
            let mut values = Vec::with_capacity(t.columns.len());
            for c in &t.columns {
                let v = if c.name == t.primary_key {
                    key.clone()
                } else if let Some((_, v)) = set.iter().find(|(n, _)| *n == c.name) {
                    v.clone()
                } else {
                    c.fill_value()
                        .ok_or_else(|| Error::Parse(format!("insert of key {key} lacks column {}", c.name)))?
                };
                values.push(v);
            }
            Ok(RowOp::Insert {
                table,
                row: Tuple::new(values),
            })
        }
        "update" => Ok(RowOp::Update { table, key, set }),
        "delete" => Ok(RowOp::Delete { table, key }),
        other => Err(Error::Parse(format!("unknown op {other:?}"))),
    }
}

pub fn parse_ops(text: &str, schema: &DatabaseSchema) -> Result<Vec<RowOp>> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| parse_line(l, schema))
        .collect()
}

/// `col=value` pairs of the non-key columns.
pub fn render_values(t: &TableSchema, row: &Tuple) -> String {
    t.columns
        .iter()
        .zip(&row.values)
        .filter(|(c, _)| c.name != t.primary_key)
        .map(|(c, v)| format!("{}={}", c.name, v))
        .collect::<Vec<_>>()
        .join(",")
}

/// `key<TAB>col=value,...`
pub fn render_row(t: &TableSchema, row: &Tuple) -> String {
    format!("{}\t{}", t.pk_of(row), render_values(t, row))
}

/// Ops that turn the older side of `deltas` into the newer one.
pub fn render_delta(schema: &DatabaseSchema, deltas: &BTreeMap<String, TableDelta>) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (table, d) in deltas {
        let t = schema.table(table)?;
        for row in &d.removed {
            out.push(format!("delete\t{table}\t{}", t.pk_of(row)));
        }
        for (_, row) in &d.modified {
            out.push(format!("update\t{table}\t{}\t{}", t.pk_of(row), render_values(t, row)));
        }
        for row in &d.added {
            out.push(format!("insert\t{table}\t{}\t{}", t.pk_of(row), render_values(t, row)));
        }
    }
    Ok(out)
}
