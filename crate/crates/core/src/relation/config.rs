//! Textual schema declarations, one table per line:
//!
//! ```text
//! table <name> (col:type[:nullable][:default=v], ...) pk=<col> groups=[a,b|c,d]
//! ```
//!
//! `groups=` lists the non-key columns of each attribute group; when omitted
//! all columns share one group. Blank lines and `#` comments are ignored.

use super::{Column, ColumnType, DatabaseSchema, TableSchema, Value};
use crate::error::{Error, Result};

pub fn parse_column_def(def: &str) -> Result<Column> {
    let mut parts = def.trim().split(':');
    let name = parts.next().unwrap_or_default().trim();
    if name.is_empty() {
        return Err(Error::Parse(format!("column definition {def:?} has no name")));
    }
    let ty = ColumnType::parse(
        parts
            .next()
            .ok_or_else(|| Error::Parse(format!("column {name} has no type")))?
            .trim(),
    )?;
    let mut col = Column::new(name, ty);
    let mut default_text = None;
    for p in parts {
        let p = p.trim();
        if p.eq_ignore_ascii_case("nullable") {
            col.nullable = true;
        } else if let Some(v) = p.strip_prefix("default=") {
            default_text = Some(v.to_string());
        } else {
            return Err(Error::Parse(format!("unknown column option {p:?} on {name}")));
        }
    }
    if let Some(v) = default_text {
        col.default = Some(Value::parse(&v, ty)?);
    }
    Ok(col)
}

pub fn parse_groups(spec: &str) -> Result<Vec<Vec<String>>> {
    let inner = spec
        .trim()
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| Error::Parse(format!("groups must look like [a,b|c,d], got {spec:?}")))?;
    Ok(inner
        .split('|')
        .map(|g| {
            g.split(',')
                .map(|c| c.trim().to_string())
                .filter(|c| !c.is_empty())
                .collect()
        })
        .collect())
}

fn parse_table(line: &str) -> Result<TableSchema> {
    let rest = line
        .strip_prefix("table")
        .ok_or_else(|| Error::Parse(format!("expected `table`, got {line:?}")))?
        .trim_start();
    let open = rest
        .find('(')
        .ok_or_else(|| Error::Parse("missing column list".into()))?;
    let close = rest
        .rfind(')')
        .ok_or_else(|| Error::Parse("unterminated column list".into()))?;
    let name = rest[..open].trim();
    let columns = rest[open + 1..close]
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(parse_column_def)
        .collect::<Result<Vec<_>>>()?;
    let mut pk = None;
    let mut groups = None;
    for opt in rest[close + 1..].split_whitespace() {
        if let Some(v) = opt.strip_prefix("pk=") {
            pk = Some(v.to_string());
        } else if let Some(v) = opt.strip_prefix("groups=") {
            groups = Some(parse_groups(v)?);
        } else {
            return Err(Error::Parse(format!("unknown table option {opt:?}")));
        }
    }
    let pk = pk.ok_or_else(|| Error::Parse(format!("table {name} has no pk=")))?;
    let mut table = TableSchema::new(name, columns, &pk);
    if let Some(groups) = groups {
        table.groups = groups
            .into_iter()
            .enumerate()
            .map(|(i, g)| table.make_group(i as u32, g))
            .collect();
    }
    table.validate()?;
    Ok(table)
}

pub fn parse_schema_config(text: &str) -> Result<DatabaseSchema> {
    let tables = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or_default().trim())
        .filter(|l| !l.is_empty())
        .map(parse_table)
        .collect::<Result<Vec<_>>>()?;
    DatabaseSchema::new(tables)
}
