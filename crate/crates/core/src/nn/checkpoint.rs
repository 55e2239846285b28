//! Versioned binary checkpoints: a JSON header describing the model
//! followed by named little-endian `f64` tensors with their shapes.
//!
//! ```text
//! magic "TSCK" | u32 version | u32 header_len | header (utf-8 json)
//! u32 tensor_count
//! repeated: u32 name_len | name | u32 rows | u32 cols | rows*cols f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::mat::Mat;
use super::param::ParamStore;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TSCK";
pub const VERSION: u32 = 1;

pub fn write_checkpoint(mut w: impl Write, header: &str, store: &ParamStore) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, m) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(m.rows() as u32).to_le_bytes())?;
        w.write_all(&(m.cols() as u32).to_le_bytes())?;
        for v in m.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn read_string(r: &mut impl Read, len: usize) -> Result<String> {
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
    String::from_utf8(b).map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Returns the header and the tensors in file order.
pub fn read_checkpoint(mut r: impl Read) -> Result<(String, Vec<(String, Mat)>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for a checkpoint".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = read_u32(&mut r)? as usize;
    let header = read_string(&mut r, hlen)?;
    let count = read_u32(&mut r)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = read_u32(&mut r)? as usize;
        let name = read_string(&mut r, nlen)?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut bytes = vec![0u8; rows * cols * 8];
        r.read_exact(&mut bytes)
            .map_err(|e| Error::Checkpoint(format!("truncated tensor {name}: {e}")))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push((name, Mat::from_vec(rows, cols, data)));
    }
    Ok((header, tensors))
}

/// Copies tensors into a store built with the same architecture, checking
/// names and shapes.
pub fn load_into(store: &mut ParamStore, tensors: Vec<(String, Mat)>) -> Result<()> {
    if tensors.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, model expects {}",
            tensors.len(),
            store.len()
        )));
    }
    for (name, m) in tensors {
        let id = store
            .find(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {name}")))?;
        let slot = store.get_mut(id);
        if slot.shape() != m.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: expected {:?}, found {:?}",
                slot.shape(),
                m.shape()
            )));
        }
        *slot = m;
    }
    Ok(())
}

pub fn save_file(path: impl AsRef<Path>, header: &str, store: &ParamStore) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(&mut w, header, store)?;
    w.flush()?;
    Ok(())
}

pub fn load_file(path: impl AsRef<Path>) -> Result<(String, Vec<(String, Mat)>)> {
    let f = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(f))
}
