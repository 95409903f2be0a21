//! `SPCK` checkpoint files.
//!
//! Layout (little-endian): magic `SPCK`, format version `u16`, then entries
//! until end of file, each `name_len: u16`, name bytes (UTF-8), `rank: u8`,
//! `rank` dims as `u32`, and the `f64` payload in row-major order.
//!
//! Optimizer state, when saved, uses reserved names: `@m/<param>`,
//! `@v/<param>` and `@step` (a one-element array).

use std::io::{Read, Write};
use std::path::Path;

use super::array::DenseArray;
use super::store::ParameterStore;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SPCK";
pub const VERSION: u16 = 1;

pub fn encode_entries(entries: &[(String, DenseArray)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, arr) in entries {
        let nb = name.as_bytes();
        let len = u16::try_from(nb.len()).map_err(|_| Error::Config(format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(nb);
        let rank = u8::try_from(arr.shape().len()).map_err(|_| Error::Dimension("rank > 255".into()))?;
        out.push(rank);
        for &d in arr.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Dimension("dim > u32".into()))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in arr.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

pub fn decode_entries(buf: &[u8]) -> Result<Vec<(String, DenseArray)>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected SPCK"));
    }
    let version = u16::from_le_bytes(c.take(2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let mut entries = Vec::new();
    while c.pos < buf.len() {
        let start = c.pos;
        let len = u16::from_le_bytes(c.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::format(start as u64 + 2, "name is not UTF-8"))?
            .to_string();
        let rank = c.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(c.take(4, "dim")?.try_into().unwrap()) as usize);
        }
        if rank == 0 {
            shape.push(1);
        }
        let n: usize = shape.iter().product();
        let payload_at = c.pos;
        let bytes = c.take(n.checked_mul(8).ok_or_else(|| Error::format(payload_at as u64, "payload too large"))?, "payload")?;
        let data = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        let arr = DenseArray::new(shape, data).map_err(|e| Error::format(start as u64, e.to_string()))?;
        entries.push((name, arr));
    }
    Ok(entries)
}

/// Serialise parameter values, optionally with AdamW state.
pub fn store_to_entries(store: &ParameterStore, with_optimizer: bool) -> Vec<(String, DenseArray)> {
    let mut entries: Vec<(String, DenseArray)> =
        store.iter().map(|(n, e)| (n.to_string(), e.value.clone())).collect();
    if with_optimizer {
        for (n, e) in store.iter() {
            entries.push((format!("@m/{n}"), e.m.clone()));
            entries.push((format!("@v/{n}"), e.v.clone()));
        }
        entries.push(("@step".into(), DenseArray::scalar(store.step_count() as f64)));
    }
    entries
}

pub fn store_from_entries(entries: Vec<(String, DenseArray)>) -> Result<ParameterStore> {
    let mut store = ParameterStore::new();
    let mut extra = Vec::new();
    for (name, arr) in entries {
        if name.starts_with('@') {
            extra.push((name, arr));
        } else {
            store.insert(&name, arr)?;
        }
    }
    for (name, arr) in extra {
        if name == "@step" {
            store.set_step_count(arr.data()[0] as u64);
        } else if let Some(p) = name.strip_prefix("@m/") {
            set_moment(&mut store, p, arr, true)?;
        } else if let Some(p) = name.strip_prefix("@v/") {
            set_moment(&mut store, p, arr, false)?;
        } else {
            return Err(Error::Data(format!("unknown reserved entry `{name}`")));
        }
    }
    Ok(store)
}

fn set_moment(store: &mut ParameterStore, name: &str, arr: DenseArray, first: bool) -> Result<()> {
    let e = store
        .entry_mut(name)
        .ok_or_else(|| Error::Data(format!("optimizer state for unknown parameter `{name}`")))?;
    if e.value.shape() != arr.shape() {
        return Err(Error::Dimension(format!("optimizer state shape for `{name}`")));
    }
    if first {
        e.m = arr;
    } else {
        e.v = arr;
    }
    Ok(())
}

pub fn save(store: &ParameterStore, path: &Path, with_optimizer: bool) -> Result<()> {
    let bytes = encode_entries(&store_to_entries(store, with_optimizer))?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParameterStore> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    store_from_entries(decode_entries(&buf)?)
}
