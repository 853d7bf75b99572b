//! Columnar leaf-chunk layout.
//!
//! ```text
//! "LDL1" | group_id u32 | rows u32 | cols u32
//! null bitmap per column: ceil(rows/8) bytes, bit i (LSB first) set = row i null
//! values per column:
//!   Int64 / Float64: rows x 8 bytes little-endian (nulls encode as zero)
//!   Utf8: (rows+1) x u32 offsets | u32 data length | data bytes
//! ```
//! All integers are little-endian. The layout is a pure function of the
//! logical rows, so equal row sets always produce equal bytes.

use super::{ColumnType, GroupShape, RowSlice, Value};
use crate::error::{Error, Result};

pub const LEAF_MAGIC: &[u8; 4] = b"LDL1";

pub fn encode_chunk(group: &GroupShape, rows: &[RowSlice]) -> Result<Vec<u8>> {
    if rows.is_empty() {
        return Err(Error::Encoding {
            pk: String::new(),
            reason: "cannot encode an empty chunk".into(),
        });
    }
    let ncols = group.columns.len();
    for row in rows {
        let pk = || row.first().map(|v| v.to_string()).unwrap_or_default();
        if row.len() != ncols {
            return Err(Error::Encoding {
                pk: pk(),
                reason: format!("row has {} values, group has {} columns", row.len(), ncols),
            });
        }
        for (v, c) in row.iter().zip(&group.columns) {
            v.check(c).map_err(|reason| Error::Encoding { pk: pk(), reason })?;
        }
    }
    let n = rows.len();
    let bitmap_len = n.div_ceil(8);
    let mut out = Vec::with_capacity(16 + ncols * (bitmap_len + n * 8));
    out.extend_from_slice(LEAF_MAGIC);
    out.extend_from_slice(&group.group_id.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(ncols as u32).to_le_bytes());
    for c in 0..ncols {
        let mut bitmap = vec![0u8; bitmap_len];
        for (i, row) in rows.iter().enumerate() {
            if row[c].is_null() {
                bitmap[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend_from_slice(&bitmap);
    }
    for (c, col) in group.columns.iter().enumerate() {
        match col.ty {
            ColumnType::Int64 => {
                for row in rows {
                    let v = if let Value::Int(i) = row[c] { i } else { 0 };
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            ColumnType::Float64 => {
                for row in rows {
                    let v = if let Value::Float(f) = row[c] { Value::float_bits(f) } else { 0 };
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            ColumnType::Utf8 => {
                let mut data = Vec::new();
                out.extend_from_slice(&0u32.to_le_bytes());
                for row in rows {
                    if let Value::Str(s) = &row[c] {
                        data.extend_from_slice(s.as_bytes());
                    }
                    out.extend_from_slice(&(data.len() as u32).to_le_bytes());
                }
                out.extend_from_slice(&(data.len() as u32).to_le_bytes());
                out.extend_from_slice(&data);
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Decoding("leaf chunk truncated".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_chunk(bytes: &[u8], group: &GroupShape) -> Result<Vec<RowSlice>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != LEAF_MAGIC {
        return Err(Error::Decoding("not a columnar leaf chunk".into()));
    }
    let group_id = r.u32()?;
    let n = r.u32()? as usize;
    let ncols = r.u32()? as usize;
    if group_id != group.group_id || ncols != group.columns.len() {
        return Err(Error::Decoding(format!(
            "chunk shape (group {group_id}, {ncols} columns) does not match group {} with {} columns",
            group.group_id,
            group.columns.len()
        )));
    }
    let bitmap_len = n.div_ceil(8);
    let mut nulls = Vec::with_capacity(ncols);
    for _ in 0..ncols {
        nulls.push(r.take(bitmap_len)?);
    }
    let is_null = |c: usize, i: usize| nulls[c][i / 8] & (1 << (i % 8)) != 0;
    let mut rows: Vec<RowSlice> = (0..n).map(|_| Vec::with_capacity(ncols)).collect();
    for (c, col) in group.columns.iter().enumerate() {
        match col.ty {
            ColumnType::Int64 => {
                for (i, row) in rows.iter_mut().enumerate() {
                    let v = r.u64()? as i64;
                    row.push(if is_null(c, i) { Value::Null } else { Value::Int(v) });
                }
            }
            ColumnType::Float64 => {
                for (i, row) in rows.iter_mut().enumerate() {
                    let v = f64::from_bits(r.u64()?);
                    row.push(if is_null(c, i) { Value::Null } else { Value::Float(v) });
                }
            }
            ColumnType::Utf8 => {
                let mut offsets = Vec::with_capacity(n + 1);
                for _ in 0..=n {
                    offsets.push(r.u32()? as usize);
                }
                let len = r.u32()? as usize;
                let data = r.take(len)?;
                for (i, row) in rows.iter_mut().enumerate() {
                    if is_null(c, i) {
                        row.push(Value::Null);
                        continue;
                    }
                    let s = data
                        .get(offsets[i]..offsets[i + 1])
                        .ok_or_else(|| Error::Decoding("utf8 offsets out of range".into()))?;
                    row.push(Value::Str(String::from_utf8(s.to_vec()).map_err(|_| {
                        Error::Decoding("invalid utf-8 in leaf chunk".into())
                    })?));
                }
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Decoding("trailing bytes after leaf chunk".into()));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relation::ColumnShape;
    use proptest::prelude::*;

    fn pk_name_group() -> GroupShape {
        GroupShape {
            group_id: 2,
            columns: vec![
                ColumnShape { name: "pk".into(), ty: ColumnType::Int64, nullable: false },
                ColumnShape { name: "name".into(), ty: ColumnType::Utf8, nullable: true },
            ],
        }
    }

    #[test]
    fn golden_bytes_three_rows() {
        let rows = vec![
            vec![Value::Int(1), Value::Str("ab".into())],
            vec![Value::Int(2), Value::Null],
            vec![Value::Int(3), Value::Str("xyz".into())],
        ];
        // byte map written out by hand
        #[rustfmt::skip]
        let expected: Vec<u8> = vec![
            b'L', b'D', b'L', b'1',
            2, 0, 0, 0,             // group id
            3, 0, 0, 0,             // rows
            2, 0, 0, 0,             // columns
            0b000,                  // pk null bitmap
            0b010,                  // name null bitmap: row 1 is null
            1, 0, 0, 0, 0, 0, 0, 0, // pk 1
            2, 0, 0, 0, 0, 0, 0, 0, // pk 2
            3, 0, 0, 0, 0, 0, 0, 0, // pk 3
            0, 0, 0, 0,             // offsets[0]
            2, 0, 0, 0,             // offsets[1]
            2, 0, 0, 0,             // offsets[2] (null row adds nothing)
            5, 0, 0, 0,             // offsets[3]
            5, 0, 0, 0,             // data length
            b'a', b'b', b'x', b'y', b'z',
        ];
        let bytes = encode_chunk(&pk_name_group(), &rows).unwrap();
        assert_eq!(bytes, expected);
        assert_eq!(decode_chunk(&expected, &pk_name_group()).unwrap(), rows);
    }

    #[test]
    fn rejects_null_in_non_nullable_and_type_mismatch() {
        let g = pk_name_group();
        assert!(matches!(
            encode_chunk(&g, &[vec![Value::Null, Value::Null]]),
            Err(Error::Encoding { .. })
        ));
        assert!(encode_chunk(&g, &[vec![Value::Int(1), Value::Int(5)]]).is_err());
        assert!(encode_chunk(&g, &[]).is_err());
    }

    #[test]
    fn decode_rejects_wrong_shape() {
        let g = pk_name_group();
        let bytes = encode_chunk(&g, &[vec![Value::Int(1), Value::Null]]).unwrap();
        let mut other = g.clone();
        other.group_id = 9;
        assert!(matches!(decode_chunk(&bytes, &other), Err(Error::Decoding(_))));
        assert!(decode_chunk(b"LDK1", &g).is_err());
    }

    fn value_strategy(ty: ColumnType, nullable: bool) -> BoxedStrategy<Value> {
        let base = match ty {
            ColumnType::Int64 => any::<i64>().prop_map(Value::Int).boxed(),
            ColumnType::Float64 => (-1e12f64..1e12).prop_map(Value::Float).boxed(),
            ColumnType::Utf8 => "[a-z]{0,12}".prop_map(Value::Str).boxed(),
        };
        if nullable {
            prop_oneof![1 => Just(Value::Null), 4 => base].boxed()
        } else {
            base
        }
    }

    proptest! {
        #[test]
        fn round_trip_and_canonical(
            keys in proptest::collection::btree_set(any::<i64>(), 1..40),
            seed_vals in proptest::collection::vec((value_strategy(ColumnType::Float64, true), value_strategy(ColumnType::Utf8, true)), 40),
        ) {
            let g = GroupShape {
                group_id: 0,
                columns: vec![
                    ColumnShape { name: "pk".into(), ty: ColumnType::Int64, nullable: false },
                    ColumnShape { name: "f".into(), ty: ColumnType::Float64, nullable: true },
                    ColumnShape { name: "s".into(), ty: ColumnType::Utf8, nullable: true },
                ],
            };
            let rows: Vec<RowSlice> = keys.iter().zip(&seed_vals)
                .map(|(k, (f, s))| vec![Value::Int(*k), f.clone(), s.clone()])
                .collect();
            let a = encode_chunk(&g, &rows).unwrap();
            prop_assert_eq!(&decode_chunk(&a, &g).unwrap(), &rows);
            // build the same logical rows a second way
            let mut shuffled = rows.clone();
            shuffled.reverse();
            shuffled.sort_by_key(|r| match r[0] { Value::Int(i) => i, _ => 0 });
            prop_assert_eq!(encode_chunk(&g, &shuffled).unwrap(), a);
        }
    }
}
