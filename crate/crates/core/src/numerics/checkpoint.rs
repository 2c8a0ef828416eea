//! Named-tensor checkpoint container.
//!
//! Layout: the magic `LOASP1\n`, then one record per tensor:
//! name length (`u32` LE), UTF-8 name, rank (`u32` LE), one `u32` LE per
//! extent, and the payload as `f64` LE in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8] = b"LOASP1\n";

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn encode(records: &[Record]) -> Vec<u8> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    for r in records {
        out.extend((r.name.len() as u32).to_le_bytes());
        out.extend(r.name.as_bytes());
        out.extend((r.shape.len() as u32).to_le_bytes());
        for &d in &r.shape {
            out.extend((d as u32).to_le_bytes());
        }
        for v in &r.data {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<Record>> {
    let bad = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    let Some(rest) = bytes.strip_prefix(CHECKPOINT_MAGIC) else {
        return Err(bad("missing LOASP1 magic".into()));
    };
    let mut cur = Cursor { buf: rest, pos: 0 };
    let mut records = Vec::new();
    while cur.pos < rest.len() {
        let at = cur.pos + CHECKPOINT_MAGIC.len();
        let truncated = || bad(format!("truncated record at byte {at}"));
        let len = cur.u32().ok_or_else(truncated)? as usize;
        let name = std::str::from_utf8(cur.take(len).ok_or_else(truncated)?)
            .map_err(|e| bad(format!("record name at byte {at}: {e}")))?
            .to_string();
        let rank = cur.u32().ok_or_else(truncated)? as usize;
        let shape = (0..rank)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(truncated)?;
        let count: usize = shape.iter().product();
        let payload = cur.take(count.checked_mul(8).ok_or_else(truncated)?).ok_or_else(truncated)?;
        let data = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        records.push(Record { name, shape, data });
    }
    Ok(records)
}

pub fn save(path: &Path, named: &[(String, Tensor)]) -> Result<()> {
    let records: Vec<Record> = named
        .iter()
        .map(|(name, t)| Record {
            name: name.clone(),
            shape: t.shape().to_vec(),
            data: t.to_vec(),
        })
        .collect();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(&records)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<Record>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Copies stored values into `named` tensors. Every tensor must be present
/// with an identical shape; extra records are an error too.
pub fn load_into(path: &Path, named: &[(String, Tensor)]) -> Result<()> {
    let records = read(path)?;
    let bad = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    if records.len() != named.len() {
        return Err(bad(format!(
            "checkpoint holds {} tensors, model expects {}",
            records.len(),
            named.len()
        )));
    }
    for (name, t) in named {
        let r = records
            .iter()
            .find(|r| &r.name == name)
            .ok_or_else(|| bad(format!("missing tensor `{name}`")))?;
        if r.shape != t.shape() {
            return Err(bad(format!("`{name}` stored as {:?}, model has {:?}", r.shape, t.shape())));
        }
        t.data_mut().copy_from_slice(&r.data);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            names in proptest::collection::vec("[a-z._0-9]{1,12}", 1..4),
            bits in proptest::collection::vec(any::<u64>(), 1..40),
        ) {
            let records: Vec<Record> = names
                .iter()
                .enumerate()
                .map(|(i, n)| {
                    let data: Vec<f64> = bits.iter().skip(i).map(|&b| f64::from_bits(b)).collect();
                    let len = data.len().max(1);
                    let data = if data.is_empty() { vec![0.0] } else { data };
                    Record { name: n.clone(), shape: vec![len], data }
                })
                .collect();
            let bytes = encode(&records);
            let back = decode(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(back.len(), records.len());
            for (a, b) in back.iter().zip(&records) {
                prop_assert_eq!(&a.name, &b.name);
                prop_assert_eq!(&a.shape, &b.shape);
                let ab: Vec<u64> = a.data.iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u64> = b.data.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(ab, bb);
            }
        }
    }

    #[test]
    fn layout_is_little_endian() {
        let bytes = encode(&[Record {
            name: "w".into(),
            shape: vec![1, 2],
            data: vec![1.0, -2.0],
        }]);
        let mut want = b"LOASP1\n".to_vec();
        want.extend([1, 0, 0, 0, b'w', 2, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        want.extend(1.0f64.to_le_bytes());
        want.extend((-2.0f64).to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn truncated_and_bad_magic_are_rejected() {
        assert!(decode(b"LOASP2\n", Path::new("x")).is_err());
        let mut bytes = encode(&[Record {
            name: "w".into(),
            shape: vec![2],
            data: vec![1.0, 2.0],
        }]);
        bytes.pop();
        assert!(decode(&bytes, Path::new("x")).is_err());
    }
}
