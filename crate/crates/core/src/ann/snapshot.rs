//! Binary snapshot format for the navigable small-world index.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic     b"HNSW"
//! version   u32 (currently 1)
//! config    m u32, ef_construction u32, ef_search u32, seed u64
//! shape     dim u32, n u64, max_level u32, entry u32 (u32::MAX = none)
//! rng       level-stream word position, u128
//! ids       n x u64
//! levels    n x u32
//! vectors   n x dim x f64
//! adjacency per node, per level 0..=levels[node]: count u32, count x u32
//! crc32     u32 over everything above
//! ```
//!
//! The level stream position is stored so a loaded index continues sampling
//! levels exactly where the saved one stopped: inserting the same vectors
//! into a snapshot-restored index and into the original yields identical
//! graphs.

use std::path::Path;

use crate::ann::hnsw::{HnswConfig, HnswIndex};
use crate::error::{Error, Result};

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"HNSW";
pub const SNAPSHOT_VERSION: u32 = 1;

// Guard rails against allocating absurd buffers from corrupt headers.
const MAX_DIM: u32 = 1 << 24;
const MAX_NODES: u64 = (u32::MAX - 1) as u64;
const MAX_LEVEL: u32 = 30;

const NO_ENTRY: u32 = u32::MAX;

pub fn snapshot_bytes(index: &HnswIndex) -> Vec<u8> {
    let (config, dim, ids, vectors, levels, adjacency, entry, max_level, word_pos) =
        index.snapshot_parts();
    let mut buf = Vec::new();
    buf.extend_from_slice(&SNAPSHOT_MAGIC);
    buf.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(config.m as u32).to_le_bytes());
    buf.extend_from_slice(&(config.ef_construction as u32).to_le_bytes());
    buf.extend_from_slice(&(config.ef_search as u32).to_le_bytes());
    buf.extend_from_slice(&config.seed.to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(ids.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(max_level as u32).to_le_bytes());
    buf.extend_from_slice(&entry.unwrap_or(NO_ENTRY).to_le_bytes());
    buf.extend_from_slice(&word_pos.to_le_bytes());
    for &id in ids {
        buf.extend_from_slice(&id.to_le_bytes());
    }
    for &l in levels {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    for &v in vectors {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for node in adjacency {
        for neighbors in node {
            buf.extend_from_slice(&(neighbors.len() as u32).to_le_bytes());
            for &n in neighbors {
                buf.extend_from_slice(&n.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, context: &'static str) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Truncated { context });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, context: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, context)?.try_into().unwrap(),
        ))
    }

    fn u64(&mut self, context: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, context)?.try_into().unwrap(),
        ))
    }

    fn u128(&mut self, context: &'static str) -> Result<u128> {
        Ok(u128::from_le_bytes(
            self.take(16, context)?.try_into().unwrap(),
        ))
    }

    fn f64(&mut self, context: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8, context)?.try_into().unwrap(),
        ))
    }
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse {
        path: "<index snapshot>".into(),
        line: 0,
        msg: msg.into(),
    }
}

pub fn snapshot_from_bytes(data: &[u8]) -> Result<HnswIndex> {
    let mut r = Reader { data, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != SNAPSHOT_MAGIC {
        return Err(Error::BadMagic {
            expected: SNAPSHOT_MAGIC,
        });
    }
    let version = r.u32("version")?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: SNAPSHOT_VERSION,
        });
    }
    let config = HnswConfig {
        m: r.u32("config m")? as usize,
        ef_construction: r.u32("config ef_construction")? as usize,
        ef_search: r.u32("config ef_search")? as usize,
        seed: r.u64("config seed")?,
    };
    let dim = r.u32("dim")?;
    if dim == 0 || dim > MAX_DIM {
        return Err(parse_err(format!("implausible dimension {dim}")));
    }
    let n = r.u64("node count")?;
    if n > MAX_NODES {
        return Err(parse_err(format!("implausible node count {n}")));
    }
    let n = n as usize;
    let max_level = r.u32("max_level")?;
    if max_level > MAX_LEVEL {
        return Err(parse_err(format!("implausible max_level {max_level}")));
    }
    let entry = r.u32("entry point")?;
    let entry = if entry == NO_ENTRY {
        if n != 0 {
            return Err(parse_err("non-empty index without entry point"));
        }
        None
    } else {
        if (entry as usize) >= n {
            return Err(parse_err(format!("entry slot {entry} out of range")));
        }
        Some(entry)
    };
    let word_pos = r.u128("rng word position")?;

    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        ids.push(r.u64("id table")?);
    }
    let mut levels = Vec::with_capacity(n);
    for _ in 0..n {
        let l = r.u32("level table")?;
        if l > max_level {
            return Err(parse_err(format!("node level {l} above max_level")));
        }
        levels.push(l);
    }
    let mut vectors = Vec::with_capacity(n * dim as usize);
    for _ in 0..n * dim as usize {
        vectors.push(r.f64("vector payload")?);
    }
    let mut adjacency = Vec::with_capacity(n);
    for &level in &levels {
        let mut node = Vec::with_capacity(level as usize + 1);
        for _ in 0..=level {
            let count = r.u32("adjacency count")? as usize;
            if count > n {
                return Err(parse_err(format!("implausible neighbor count {count}")));
            }
            let mut neighbors = Vec::with_capacity(count);
            for _ in 0..count {
                let s = r.u32("adjacency slot")?;
                if (s as usize) >= n {
                    return Err(parse_err(format!("neighbor slot {s} out of range")));
                }
                neighbors.push(s);
            }
            node.push(neighbors);
        }
        adjacency.push(node);
    }

    if r.pos + 4 > data.len() {
        return Err(Error::Truncated { context: "crc32" });
    }
    if r.pos + 4 < data.len() {
        return Err(parse_err(format!(
            "{} trailing bytes",
            data.len() - r.pos - 4
        )));
    }
    let stored = u32::from_le_bytes(data[r.pos..r.pos + 4].try_into().unwrap());
    let computed = crc32fast::hash(&data[..r.pos]);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }

    HnswIndex::from_snapshot_parts(
        config,
        dim as usize,
        ids,
        vectors,
        levels,
        adjacency,
        entry,
        max_level as usize,
        word_pos,
    )
}

pub fn save_index(index: &HnswIndex, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, snapshot_bytes(index)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_index(path: impl AsRef<Path>) -> Result<HnswIndex> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    snapshot_from_bytes(&data)
}
