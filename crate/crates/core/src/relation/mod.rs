//! Relation schemas, typed tuples and attribute-group partitioning.

mod config;
mod encoding;

pub use config::{parse_column_def, parse_groups, parse_schema_config};
pub use encoding::{decode_chunk, encode_chunk, LEAF_MAGIC};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chunker::Entry;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColumnType {
    Int64,
    Float64,
    Utf8,
}

impl ColumnType {
    pub fn parse(s: &str) -> Result<ColumnType> {
        match s.to_ascii_lowercase().as_str() {
            "int64" | "i64" | "int" => Ok(ColumnType::Int64),
            "float64" | "f64" | "float" | "double" => Ok(ColumnType::Float64),
            "utf8" | "string" | "text" => Ok(ColumnType::Utf8),
            other => Err(Error::Schema(format!("unknown column type {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ColumnType::Int64 => "int64",
            ColumnType::Float64 => "float64",
            ColumnType::Utf8 => "utf8",
        }
    }
}

const CANONICAL_NAN: u64 = 0x7ff8_0000_0000_0000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Value {
    Null,
    Int(i64),
    Float(f64),
    Str(String),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn type_of(&self) -> Option<ColumnType> {
        match self {
            Value::Null => None,
            Value::Int(_) => Some(ColumnType::Int64),
            Value::Float(_) => Some(ColumnType::Float64),
            Value::Str(_) => Some(ColumnType::Utf8),
        }
    }

    pub fn float_bits(f: f64) -> u64 {
        if f.is_nan() {
            CANONICAL_NAN
        } else {
            f.to_bits()
        }
    }

    /// Parses a literal of the given type; `null` (any case) is Null.
    pub fn parse(text: &str, ty: ColumnType) -> Result<Value> {
        if text.eq_ignore_ascii_case("null") {
            return Ok(Value::Null);
        }
        match ty {
            ColumnType::Int64 => text
                .trim()
                .parse()
                .map(Value::Int)
                .map_err(|_| Error::Parse(format!("{text:?} is not an int64"))),
            ColumnType::Float64 => text
                .trim()
                .parse()
                .map(Value::Float)
                .map_err(|_| Error::Parse(format!("{text:?} is not a float64"))),
            ColumnType::Utf8 => Ok(Value::Str(text.to_string())),
        }
    }

    pub fn check(&self, col: &ColumnShape) -> std::result::Result<(), String> {
        match self.type_of() {
            None if col.nullable => Ok(()),
            None => Err(format!("null in non-nullable column {}", col.name)),
            Some(t) if t == col.ty => Ok(()),
            Some(t) => Err(format!(
                "column {} expects {}, got {}",
                col.name,
                col.ty.name(),
                t.name()
            )),
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Null, Value::Null) => true,
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Float(a), Value::Float(b)) => Value::float_bits(*a) == Value::float_bits(*b),
            (Value::Str(a), Value::Str(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("null"),
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v:?}"),
            Value::Str(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub ty: ColumnType,
    pub nullable: bool,
    pub default: Option<Value>,
}

impl Column {
    pub fn new(name: &str, ty: ColumnType) -> Column {
        Column {
            name: name.to_string(),
            ty,
            nullable: false,
            default: None,
        }
    }

    pub fn nullable(mut self) -> Column {
        self.nullable = true;
        self
    }

    pub fn with_default(mut self, v: Value) -> Column {
        self.default = Some(v);
        self
    }

    pub fn shape(&self) -> ColumnShape {
        ColumnShape {
            name: self.name.clone(),
            ty: self.ty,
            nullable: self.nullable,
        }
    }

    /// Value used to back-fill this column, if one exists.
    pub fn fill_value(&self) -> Option<Value> {
        match (&self.default, self.nullable) {
            (Some(d), _) => Some(d.clone()),
            (None, true) => Some(Value::Null),
            (None, false) => None,
        }
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.name, self.ty.name())?;
        if self.nullable {
            f.write_str(":nullable")?;
        }
        if let Some(d) = &self.default {
            write!(f, ":default={d}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeGroup {
    pub group_id: u32,
    /// Column names, primary key first.
    pub columns: Vec<String>,
}

/// Physical description of one attribute group: enough to encode and decode
/// its chunks without the rest of the schema.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColumnShape {
    pub name: String,
    pub ty: ColumnType,
    pub nullable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupShape {
    pub group_id: u32,
    pub columns: Vec<ColumnShape>,
}

/// Values of one group for one row, aligned with the group's columns
/// (primary key first).
pub type RowSlice = Vec<Value>;

impl GroupShape {
    pub fn pk_type(&self) -> ColumnType {
        self.columns[0].ty
    }

    pub fn to_entry(&self, row: &[Value]) -> Result<Entry> {
        if row.len() != self.columns.len() {
            return Err(Error::Encoding {
                pk: row.first().map(|v| v.to_string()).unwrap_or_default(),
                reason: format!("expected {} values, got {}", self.columns.len(), row.len()),
            });
        }
        for (v, c) in row.iter().zip(&self.columns) {
            v.check(c).map_err(|reason| Error::Encoding {
                pk: row[0].to_string(),
                reason,
            })?;
        }
        Ok(Entry {
            key: encode_key(&row[0])?,
            value: encode_values(&row[1..]),
        })
    }

    pub fn from_entry(&self, entry: &Entry) -> Result<RowSlice> {
        let mut row = Vec::with_capacity(self.columns.len());
        row.push(decode_key(&entry.key, self.pk_type())?);
        row.extend(decode_values(&entry.value, &self.columns[1..])?);
        Ok(row)
    }
}

/// Order-preserving byte encoding of a primary-key value.
pub fn encode_key(v: &Value) -> Result<Vec<u8>> {
    match v {
        Value::Int(i) => Ok(((*i as u64) ^ (1 << 63)).to_be_bytes().to_vec()),
        Value::Float(f) => {
            let bits = Value::float_bits(*f);
            let ordered = if bits >> 63 == 1 { !bits } else { bits ^ (1 << 63) };
            Ok(ordered.to_be_bytes().to_vec())
        }
        Value::Str(s) => Ok(s.as_bytes().to_vec()),
        Value::Null => Err(Error::Encoding {
            pk: "null".into(),
            reason: "primary key may not be null".into(),
        }),
    }
}

pub fn decode_key(bytes: &[u8], ty: ColumnType) -> Result<Value> {
    let fixed = || -> Result<u64> {
        let arr: [u8; 8] = bytes
            .try_into()
            .map_err(|_| Error::Decoding("fixed-width key is not 8 bytes".into()))?;
        Ok(u64::from_be_bytes(arr))
    };
    match ty {
        ColumnType::Int64 => Ok(Value::Int((fixed()? ^ (1 << 63)) as i64)),
        ColumnType::Float64 => {
            let o = fixed()?;
            let bits = if o >> 63 == 1 { o ^ (1 << 63) } else { !o };
            Ok(Value::Float(f64::from_bits(bits)))
        }
        ColumnType::Utf8 => String::from_utf8(bytes.to_vec())
            .map(Value::Str)
            .map_err(|_| Error::Decoding("key is not valid utf-8".into())),
    }
}

/// Compact self-delimiting encoding of non-key values, used as entry values.
pub fn encode_values(values: &[Value]) -> Vec<u8> {
    let mut out = Vec::new();
    for v in values {
        match v {
            Value::Null => out.push(0),
            Value::Int(i) => {
                out.push(1);
                out.extend_from_slice(&i.to_le_bytes());
            }
            Value::Float(f) => {
                out.push(2);
                out.extend_from_slice(&Value::float_bits(*f).to_le_bytes());
            }
            Value::Str(s) => {
                out.push(3);
                out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
        }
    }
    out
}

pub fn decode_values(bytes: &[u8], columns: &[ColumnShape]) -> Result<Vec<Value>> {
    let mut pos = 0;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::Decoding("truncated row value".into()))?;
        pos += n;
        Ok(s)
    };
    let mut out = Vec::with_capacity(columns.len());
    for _ in columns {
        let tag = take(1)?[0];
        out.push(match tag {
            0 => Value::Null,
            1 => Value::Int(i64::from_le_bytes(take(8)?.try_into().unwrap())),
            2 => Value::Float(f64::from_bits(u64::from_le_bytes(take(8)?.try_into().unwrap()))),
            3 => {
                let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
                let s = take(len)?;
                Value::Str(
                    String::from_utf8(s.to_vec())
                        .map_err(|_| Error::Decoding("invalid utf-8 in row value".into()))?,
                )
            }
            t => return Err(Error::Decoding(format!("bad value tag {t}"))),
        });
    }
    if pos != bytes.len() {
        return Err(Error::Decoding("trailing bytes in row value".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tuple {
    pub values: Vec<Value>,
}

impl Tuple {
    pub fn new(values: Vec<Value>) -> Tuple {
        Tuple { values }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<Column>,
    pub primary_key: String,
    pub groups: Vec<AttributeGroup>,
}

impl TableSchema {
    /// Table with a single attribute group holding every column.
    pub fn new(name: &str, columns: Vec<Column>, primary_key: &str) -> TableSchema {
        let mut t = TableSchema {
            name: name.to_string(),
            columns,
            primary_key: primary_key.to_string(),
            groups: Vec::new(),
        };
        let rest: Vec<String> = t.non_pk_names();
        t.groups = vec![t.make_group(0, rest)];
        t
    }

    /// Replaces the grouping; each inner list names non-key columns.
    pub fn with_groups(mut self, groups: Vec<Vec<&str>>) -> TableSchema {
        self.groups = groups
            .into_iter()
            .enumerate()
            .map(|(i, g)| self.make_group(i as u32, g.into_iter().map(String::from).collect()))
            .collect();
        self
    }

    pub(crate) fn make_group(&self, group_id: u32, non_pk: Vec<String>) -> AttributeGroup {
        let mut columns = vec![self.primary_key.clone()];
        columns.extend(non_pk);
        AttributeGroup { group_id, columns }
    }

    pub fn non_pk_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| c.name != self.primary_key)
            .map(|c| c.name.clone())
            .collect()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn pk_index(&self) -> usize {
        self.column_index(&self.primary_key)
            .expect("validated schema has its primary key")
    }

    pub fn pk_type(&self) -> ColumnType {
        self.columns[self.pk_index()].ty
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Schema(format!("table {}: {m}", self.name)));
        if self.name.is_empty() {
            return err("empty table name".into());
        }
        let mut names = std::collections::HashSet::new();
        for c in &self.columns {
            if !names.insert(c.name.as_str()) {
                return err(format!("duplicate column {}", c.name));
            }
            if let Some(d) = &c.default {
                if let Err(m) = d.check(&c.shape()) {
                    return err(format!("default does not type-check: {m}"));
                }
            }
        }
        let Some(pk) = self.column(&self.primary_key) else {
            return err(format!("primary key {} is not a column", self.primary_key));
        };
        if pk.nullable {
            return err("primary key must be non-nullable".into());
        }
        if self.groups.is_empty() {
            return err("at least one attribute group is required".into());
        }
        let mut covered = std::collections::HashSet::new();
        for g in &self.groups {
            if g.columns.first() != Some(&self.primary_key) {
                return err(format!("group {} must start with the primary key", g.group_id));
            }
            for c in &g.columns[1..] {
                if self.column(c).is_none() {
                    return err(format!("group {} names unknown column {c}", g.group_id));
                }
                if c == &self.primary_key || !covered.insert(c.clone()) {
                    return err(format!("column {c} appears in more than one group"));
                }
            }
        }
        let non_pk = self.non_pk_names();
        if covered.len() != non_pk.len() {
            return err("groups must partition the non-key columns".into());
        }
        if !non_pk.is_empty() && self.groups.iter().any(|g| g.columns.len() < 2) {
            return err("every group needs at least one non-key column".into());
        }
        Ok(())
    }

    pub fn group_shape(&self, group_index: usize) -> GroupShape {
        let g = &self.groups[group_index];
        GroupShape {
            group_id: g.group_id,
            columns: g
                .columns
                .iter()
                .map(|n| self.column(n).expect("validated group column").shape())
                .collect(),
        }
    }

    pub fn group_shapes(&self) -> Vec<GroupShape> {
        (0..self.groups.len()).map(|i| self.group_shape(i)).collect()
    }

    pub fn check_tuple(&self, t: &Tuple) -> Result<()> {
        if t.values.len() != self.columns.len() {
            return Err(Error::Encoding {
                pk: String::new(),
                reason: format!(
                    "table {} has {} columns, tuple has {}",
                    self.name,
                    self.columns.len(),
                    t.values.len()
                ),
            });
        }
        let pk = t.values[self.pk_index()].to_string();
        for (v, c) in t.values.iter().zip(&self.columns) {
            v.check(&c.shape())
                .map_err(|reason| Error::Encoding { pk: pk.clone(), reason })?;
        }
        Ok(())
    }

    pub fn pk_of<'a>(&self, t: &'a Tuple) -> &'a Value {
        &t.values[self.pk_index()]
    }
}

impl fmt::Display for TableSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cols: Vec<String> = self.columns.iter().map(|c| c.to_string()).collect();
        let groups: Vec<String> = self.groups.iter().map(|g| g.columns[1..].join(",")).collect();
        write!(
            f,
            "table {} ({}) pk={} groups=[{}]",
            self.name,
            cols.join(", "),
            self.primary_key,
            groups.join("|")
        )
    }
}

/// One row split into per-group slices, each carrying the primary key.
pub fn split_tuple(t: &Tuple, schema: &TableSchema) -> Vec<RowSlice> {
    schema
        .groups
        .iter()
        .map(|g| {
            g.columns
                .iter()
                .map(|n| t.values[schema.column_index(n).expect("validated group")].clone())
                .collect()
        })
        .collect()
}

pub fn assemble_tuple(slices: &[RowSlice], schema: &TableSchema) -> Result<Tuple> {
    if slices.len() != schema.groups.len() {
        return Err(Error::Assembly(format!(
            "expected {} slices, got {}",
            schema.groups.len(),
            slices.len()
        )));
    }
    let pk = slices
        .first()
        .and_then(|s| s.first())
        .ok_or_else(|| Error::Assembly("empty slice".into()))?;
    let mut values = vec![Value::Null; schema.columns.len()];
    for (slice, group) in slices.iter().zip(&schema.groups) {
        if slice.len() != group.columns.len() {
            return Err(Error::Assembly(format!(
                "group {} slice has {} values, expected {}",
                group.group_id,
                slice.len(),
                group.columns.len()
            )));
        }
        if &slice[0] != pk {
            return Err(Error::Assembly(format!(
                "primary key mismatch: {} vs {}",
                pk, slice[0]
            )));
        }
        for (v, name) in slice.iter().zip(&group.columns) {
            values[schema.column_index(name).expect("validated group")] = v.clone();
        }
    }
    Ok(Tuple { values })
}

/// All tables of one database version.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatabaseSchema {
    pub tables: BTreeMap<String, TableSchema>,
}

impl DatabaseSchema {
    pub fn new(tables: Vec<TableSchema>) -> Result<DatabaseSchema> {
        let mut s = DatabaseSchema::default();
        for t in tables {
            if s.tables.contains_key(&t.name) {
                return Err(Error::Schema(format!("duplicate table {}", t.name)));
            }
            s.tables.insert(t.name.clone(), t);
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tables.is_empty() {
            return Err(Error::Schema("schema declares no tables".into()));
        }
        self.tables.values().try_for_each(TableSchema::validate)
    }

    pub fn table(&self, name: &str) -> Result<&TableSchema> {
        self.tables
            .get(name)
            .ok_or_else(|| Error::NotFound(format!("table {name}")))
    }

    /// Hex SHA-256 of the canonical JSON form (which, unlike the config
    /// text, also pins attribute-group ids).
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("schema serialization is infallible");
        hex::encode(Sha256::digest(&json))
    }
}

impl fmt::Display for DatabaseSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in self.tables.values() {
            writeln!(f, "{t}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::SplitMix64;

    pub(crate) fn five_col() -> TableSchema {
        TableSchema::new(
            "t",
            vec![
                Column::new("pk", ColumnType::Int64),
                Column::new("a", ColumnType::Int64),
                Column::new("b", ColumnType::Utf8).nullable(),
                Column::new("c", ColumnType::Float64),
                Column::new("d", ColumnType::Int64).nullable(),
            ],
            "pk",
        )
        .with_groups(vec![vec!["a", "b"], vec!["c", "d"]])
    }

    fn random_tuple(rng: &mut SplitMix64) -> Tuple {
        let s: String = (0..rng.random_range(0..10))
            .map(|_| rng.random_range(b'a'..=b'z') as char)
            .collect();
        Tuple::new(vec![
            Value::Int(rng.random()),
            Value::Int(rng.random()),
            if rng.random_bool(0.2) { Value::Null } else { Value::Str(s) },
            Value::Float(rng.random::<f64>() * 1e6),
            if rng.random_bool(0.3) { Value::Null } else { Value::Int(rng.random()) },
        ])
    }

    #[test]
    fn single_group_split_is_identity() {
        let t = TableSchema::new(
            "t",
            vec![Column::new("id", ColumnType::Int64), Column::new("x", ColumnType::Utf8)],
            "id",
        );
        let row = Tuple::new(vec![Value::Int(4), Value::Str("q".into())]);
        assert_eq!(split_tuple(&row, &t), vec![row.values.clone()]);
    }

    #[test]
    fn split_into_two_groups() {
        let schema = five_col();
        schema.validate().unwrap();
        let row = Tuple::new(vec![
            Value::Int(1),
            Value::Int(2),
            Value::Str("x".into()),
            Value::Float(0.5),
            Value::Null,
        ]);
        let slices = split_tuple(&row, &schema);
        assert_eq!(slices[0], vec![Value::Int(1), Value::Int(2), Value::Str("x".into())]);
        assert_eq!(slices[1], vec![Value::Int(1), Value::Float(0.5), Value::Null]);
    }

    #[test]
    fn assemble_inverts_split_on_random_tuples() {
        let schema = five_col();
        let mut rng = SplitMix64::seed_from_u64(11);
        for _ in 0..1000 {
            let t = random_tuple(&mut rng);
            schema.check_tuple(&t).unwrap();
            let back = assemble_tuple(&split_tuple(&t, &schema), &schema).unwrap();
            assert_eq!(back, t);
        }
    }

    #[test]
    fn assemble_rejects_pk_mismatch() {
        let schema = five_col();
        let slices = vec![
            vec![Value::Int(1), Value::Int(2), Value::Null],
            vec![Value::Int(9), Value::Float(1.0), Value::Null],
        ];
        assert!(matches!(assemble_tuple(&slices, &schema), Err(Error::Assembly(_))));
    }

    #[test]
    fn key_encoding_preserves_order() {
        let ints = [i64::MIN, -5, -1, 0, 1, 7, i64::MAX];
        for w in ints.windows(2) {
            assert!(encode_key(&Value::Int(w[0])).unwrap() < encode_key(&Value::Int(w[1])).unwrap());
        }
        let floats = [f64::NEG_INFINITY, -2.5, -0.0, 0.0, 1e-9, 3.0, f64::INFINITY];
        for w in floats.windows(2) {
            assert!(
                encode_key(&Value::Float(w[0])).unwrap() < encode_key(&Value::Float(w[1])).unwrap()
            );
        }
        for f in floats {
            let k = encode_key(&Value::Float(f)).unwrap();
            assert_eq!(decode_key(&k, ColumnType::Float64).unwrap(), Value::Float(f));
        }
        assert!(encode_key(&Value::Null).is_err());
    }

    #[test]
    fn schema_validation() {
        let mut s = five_col();
        s.columns[0].nullable = true;
        assert!(s.validate().is_err());
        let s = five_col().with_groups(vec![vec!["a", "b"], vec!["c"]]);
        assert!(s.validate().is_err(), "d is not covered");
        let s = five_col().with_groups(vec![vec!["a", "b", "c"], vec!["c", "d"]]);
        assert!(s.validate().is_err(), "c is in two groups");
        let mut s = five_col();
        s.columns[1].default = Some(Value::Str("x".into()));
        assert!(s.validate().is_err());
    }
}
