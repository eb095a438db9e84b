//! Binary embedding cache, little-endian:
//!
//! ```text
//! "SIMH" | version u32 | dim u32 | count u64 | count*dim f32 (row-major)
//! | count x (u32 byte length, UTF-8 video_id, u64 frame_id)
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{EmbeddingStore, RowMeta};
use crate::error::{Error, Result};

pub const CACHE_MAGIC: [u8; 4] = *b"SIMH";
pub const CACHE_VERSION: u32 = 1;

pub fn write_cache<W: Write>(store: &EmbeddingStore, mut w: W) -> Result<()> {
    w.write_all(&CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&(store.dim() as u32).to_le_bytes())?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for v in store.rows() {
        w.write_all(&v.to_le_bytes())?;
    }
    for m in store.meta() {
        w.write_all(&(m.video_id.len() as u32).to_le_bytes())?;
        w.write_all(m.video_id.as_bytes())?;
        w.write_all(&m.frame_id.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_cache(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    write_cache(store, BufWriter::new(File::create(path)?))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "{what} needs {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn read_cache(bytes: &[u8]) -> Result<EmbeddingStore> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4, "magic")?.try_into().unwrap();
    if magic != CACHE_MAGIC {
        return Err(Error::BadMagic {
            expected: CACHE_MAGIC,
            found: magic,
        });
    }
    let version = cur.u32("version")?;
    if version != CACHE_VERSION {
        return Err(Error::Version(version));
    }
    let dim = cur.u32("dim")? as usize;
    let count = cur.u64("count")? as usize;
    if dim == 0 {
        return Err(Error::DimMismatch {
            expected: 1,
            found: 0,
        });
    }
    let n_values = count
        .checked_mul(dim)
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| Error::Truncated(format!("implausible count {count} x dim {dim}")))?;
    let raw = cur.take(n_values * 4, "embedding rows")?;
    let rows: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut meta = Vec::with_capacity(count);
    for _ in 0..count {
        let len = cur.u32("video_id length")? as usize;
        let video_id = std::str::from_utf8(cur.take(len, "video_id")?)
            .map_err(|e| Error::InvalidRecord(format!("video_id is not UTF-8: {e}")))?
            .to_string();
        let frame_id = cur.u64("frame_id")?;
        meta.push(RowMeta { video_id, frame_id });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Truncated(format!(
            "{} trailing bytes after metadata",
            bytes.len() - cur.pos
        )));
    }
    EmbeddingStore::new(dim, rows, meta)
}

pub fn load_cache(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    read_cache(&bytes)
}

/// Loads a cache and checks that its embedding width is `dim`.
pub fn load_cache_with_dim(path: impl AsRef<Path>, dim: usize) -> Result<EmbeddingStore> {
    let store = load_cache(path)?;
    if store.dim() != dim {
        return Err(Error::DimMismatch {
            expected: dim,
            found: store.dim(),
        });
    }
    Ok(store)
}
