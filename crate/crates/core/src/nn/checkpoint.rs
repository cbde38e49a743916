//! Binary checkpoints: a flat list of named, shaped `f64` arrays.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic  b"FCBDRCK1"
//! u32    array count
//! per array:
//!   u32  name length, then UTF-8 name bytes
//!   u32  rank, then rank × u64 dims
//!   f64  × product(dims) values
//! ```
//!
//! Arrays: `hidden.{i}.weight`, `hidden.{i}.bias`, `head.weight`,
//! `head.bias`, `class_order`, `boundary`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Dense, Model};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

const MAGIC: &[u8; 8] = b"FCBDRCK1";

struct NamedArray {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

fn arrays_of(model: &Model) -> Vec<NamedArray> {
    let mut out = Vec::new();
    let mut push_dense = |prefix: String, l: &Dense| {
        out.push(NamedArray {
            name: format!("{prefix}.weight"),
            shape: vec![l.weight.rows(), l.weight.cols()],
            values: l.weight.data().to_vec(),
        });
        out.push(NamedArray {
            name: format!("{prefix}.bias"),
            shape: vec![l.bias.len()],
            values: l.bias.clone(),
        });
    };
    for (i, l) in model.hidden().iter().enumerate() {
        push_dense(format!("hidden.{i}"), l);
    }
    push_dense("head".to_string(), model.head());
    out.push(NamedArray {
        name: "class_order".into(),
        shape: vec![model.num_classes()],
        values: model.class_order().iter().map(|&c| c as f64).collect(),
    });
    out.push(NamedArray {
        name: "boundary".into(),
        shape: vec![1],
        values: vec![model.boundary() as f64],
    });
    out
}

pub fn write_checkpoint<W: Write>(model: &Model, mut w: W) -> Result<()> {
    let arrays = arrays_of(model);
    w.write_all(MAGIC)?;
    w.write_all(&(arrays.len() as u32).to_le_bytes())?;
    for a in arrays {
        w.write_all(&(a.name.len() as u32).to_le_bytes())?;
        w.write_all(a.name.as_bytes())?;
        w.write_all(&(a.shape.len() as u32).to_le_bytes())?;
        for d in &a.shape {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for v in &a.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of data".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor {
        bytes: &bytes,
        at: 0,
    };
    if cur.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let count = cur.u32()? as usize;
    let mut arrays = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?;
        let rank = cur.u32()? as usize;
        let shape = (0..rank)
            .map(|_| cur.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflows")))?;
        let raw = cur.take(
            len.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflows")))?,
        )?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        arrays.push(NamedArray {
            name,
            shape,
            values,
        });
    }
    if cur.at != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }

    fn take(arrays: &mut Vec<NamedArray>, name: &str) -> Result<NamedArray> {
        let pos = arrays
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing array {name}")))?;
        Ok(arrays.remove(pos))
    }
    let dense = |w: NamedArray, b: NamedArray| -> Result<Dense> {
        if w.shape.len() != 2 || b.shape.len() != 1 {
            return Err(Error::Checkpoint(format!("{} has the wrong rank", w.name)));
        }
        Ok(Dense {
            weight: Matrix::new(w.shape[0], w.shape[1], w.values)?,
            bias: b.values,
        })
    };

    let mut hidden = Vec::new();
    for i in 0.. {
        let wname = format!("hidden.{i}.weight");
        if !arrays.iter().any(|a| a.name == wname) {
            break;
        }
        let w = take(&mut arrays, &wname)?;
        let b = take(&mut arrays, &format!("hidden.{i}.bias"))?;
        hidden.push(dense(w, b)?);
    }
    let head = dense(
        take(&mut arrays, "head.weight")?,
        take(&mut arrays, "head.bias")?,
    )?;
    let class_order = take(&mut arrays, "class_order")?
        .values
        .into_iter()
        .map(|v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Checkpoint(format!("bad class id {v}")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let boundary = take(&mut arrays, "boundary")?;
    let boundary = match boundary.values.as_slice() {
        [b] if *b >= 0.0 && b.fract() == 0.0 => *b as usize,
        _ => return Err(Error::Checkpoint("bad boundary".into())),
    };
    if let Some(extra) = arrays.first() {
        return Err(Error::Checkpoint(format!("unknown array {}", extra.name)));
    }
    Model::from_parts(hidden, head, class_order, boundary)
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    read_checkpoint(bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let m = Model::new(5, &[7, 3], 11)
            .unwrap()
            .expand_head(&[4, 1], 1)
            .unwrap()
            .expand_head(&[0], 2)
            .unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.checksum(), m.checksum());
    }

    #[test]
    fn truncated_data_is_rejected() {
        let m = Model::new(2, &[2], 0)
            .unwrap()
            .expand_head(&[0, 1], 0)
            .unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(
            read_checkpoint(buf.as_slice()),
            Err(Error::Checkpoint(_))
        ));
        assert!(read_checkpoint(&b"NOTACKPT\0\0\0\0"[..]).is_err());
    }
}
