//! Binary index file.
//!
//! ```text
//! "SRVX" | version u16 | dim u32 | count u64
//! count x ( pmid_len u32 | pmid utf-8 | dim x f64 )
//! crc64 u64            (CRC-64/XZ of every preceding byte)
//! ```
//!
//! All integers and floats are little-endian. Loading is all-or-nothing.

use std::collections::HashMap;
use std::io::{self, Write};
use std::path::Path;

use crc::{Crc, Digest, CRC_64_XZ};

use super::{IndexError, VectorIndex};
use crate::embedding::EmbeddingVector;
use crate::storage::write_atomic;

pub const MAGIC: &[u8; 4] = b"SRVX";
pub const FORMAT_VERSION: u16 = 1;

const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);
const HEADER_LEN: usize = 4 + 2 + 4 + 8;
const TRAILER_LEN: usize = 8;

struct ChecksumWriter<'a, W: Write> {
    inner: W,
    digest: Digest<'a, u64>,
}

impl<W: Write> Write for ChecksumWriter<'_, W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.digest.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

impl VectorIndex {
    pub fn write_to<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = ChecksumWriter {
            inner: out,
            digest: CRC64.digest(),
        };
        let dim = u32::try_from(self.dim)
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "dim exceeds u32"))?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&dim.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (pmid, vector) in &self.entries {
            let len = u32::try_from(pmid.len())
                .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "pmid too long"))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(pmid.as_bytes())?;
            for v in vector.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        let ChecksumWriter { mut inner, digest } = w;
        inner.write_all(&digest.finalize().to_le_bytes())?;
        inner.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        if bytes.len() < HEADER_LEN + TRAILER_LEN {
            if bytes.len() >= 4 && &bytes[..4] != MAGIC {
                return Err(IndexError::corrupt("magic", "not an index file"));
            }
            return Err(IndexError::corrupt(
                "header",
                format!(
                    "file is {} bytes, shorter than the fixed header",
                    bytes.len()
                ),
            ));
        }
        if &bytes[..4] != MAGIC {
            return Err(IndexError::corrupt("magic", "not an index file"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(IndexError::corrupt(
                "version",
                format!("unsupported format version {version}"),
            ));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - TRAILER_LEN);
        let stored = u64::from_le_bytes(trailer.try_into().expect("8-byte trailer"));
        let computed = CRC64.checksum(body);
        if stored != computed {
            return Err(IndexError::corrupt(
                "checksum",
                format!("stored {stored:016x}, computed {computed:016x}"),
            ));
        }

        let mut cur = Cursor { buf: body, pos: 6 };
        let dim = cur.u32("dim")? as usize;
        if dim == 0 {
            return Err(IndexError::corrupt("dim", "dimension is zero"));
        }
        let count = cur.u64("count")?;
        let entry_floor = 4 + 8 * dim as u64;
        if count > (body.len() as u64) / entry_floor {
            return Err(IndexError::corrupt(
                "count",
                format!("{count} entries cannot fit"),
            ));
        }
        let mut entries = Vec::with_capacity(count as usize);
        let mut positions = HashMap::with_capacity(count as usize);
        for i in 0..count as usize {
            let len = cur.u32("pmid")? as usize;
            let pmid = std::str::from_utf8(cur.take(len, "pmid")?)
                .map_err(|_| IndexError::corrupt("pmid", format!("entry {i} is not UTF-8")))?
                .to_string();
            let raw = cur.take(8 * dim, "vector")?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let vector = EmbeddingVector::from_unit(values)
                .map_err(|e| IndexError::corrupt("vector", format!("entry {i}: {e}")))?;
            if positions.insert(pmid.clone(), i).is_some() {
                return Err(IndexError::corrupt(
                    "pmid",
                    format!("duplicate pmid {pmid}"),
                ));
            }
            entries.push((pmid, vector));
        }
        if cur.pos != body.len() {
            return Err(IndexError::corrupt(
                "length",
                format!("{} unexpected trailing bytes", body.len() - cur.pos),
            ));
        }
        Ok(Self {
            dim,
            entries,
            positions,
        })
    }

    /// Writes the index atomically: temp file, fsync, rename.
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        write_atomic(path, |w| self.write_to(w))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8], IndexError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.buf.len())
            .ok_or_else(|| IndexError::corrupt(field, "unexpected end of data"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(
            self.take(4, field)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(
            self.take(8, field)?.try_into().expect("8 bytes"),
        ))
    }
}
