//! The `MMNB` embedding-store file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "MMNB" | version u32 = 1 | count u64 | dim u32 | metric u8 (0 dot, 1 cosine)
//! | generator u8 | reserved 6 bytes (zero)
//! then `count` records: id_len u16 | id (UTF-8) | dim x f32
//! ```
//!
//! Records are written in id order, so equal stores encode to equal bytes.

use std::fs;
use std::path::Path;

use mmndb_core::embedding::{EmbeddingError, EmbeddingStore, SimilarityMetric};

pub const STORE_MAGIC: [u8; 4] = *b"MMNB";
pub const STORE_VERSION: u32 = 1;
pub const STORE_HEADER_LEN: usize = 28;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated at byte offset {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("{trailing} trailing bytes after the last record at offset {offset}")]
    TrailingBytes { offset: usize, trailing: usize },
    #[error("unknown metric code {code} at byte offset {offset}")]
    UnknownMetric { offset: usize, code: u8 },
    #[error("non-zero reserved byte at offset {offset}")]
    Reserved { offset: usize },
    #[error("record id at byte offset {offset} is not valid UTF-8")]
    BadId { offset: usize },
    #[error("id of {len} bytes does not fit the u16 length field")]
    IdTooLong { len: usize },
    #[error("invalid contents: {0}")]
    Invalid(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// A bounds-checked little-endian reader that reports where it failed.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::Truncated {
                offset: self.bytes.len(),
                needed: n - self.remaining(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub(crate) fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.array::<1>()?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        let len = n.checked_mul(4).ok_or(FormatError::Truncated {
            offset: self.bytes.len(),
            needed: usize::MAX,
        })?;
        let raw = self.take(len)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<(), FormatError> {
        match self.remaining() {
            0 => Ok(()),
            trailing => Err(FormatError::TrailingBytes {
                offset: self.pos,
                trailing,
            }),
        }
    }
}

pub(crate) fn check_magic(c: &mut Cursor<'_>, expected: [u8; 4]) -> Result<(), FormatError> {
    let found = c.array::<4>()?;
    if found != expected {
        return Err(FormatError::BadMagic { expected, found });
    }
    Ok(())
}

fn metric_code(m: SimilarityMetric) -> u8 {
    match m {
        SimilarityMetric::Dot => 0,
        SimilarityMetric::Cosine => 1,
    }
}

pub fn encode_store(store: &EmbeddingStore) -> Result<Vec<u8>, FormatError> {
    let dim = u32::try_from(store.dim())
        .map_err(|_| FormatError::Invalid("dimension exceeds u32".into()))?;
    let mut out = Vec::with_capacity(STORE_HEADER_LEN + store.len() * (store.dim() * 4 + 18));
    out.extend_from_slice(&STORE_MAGIC);
    out.extend_from_slice(&STORE_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.push(metric_code(store.metric_hint()));
    out.push(store.generator());
    out.extend_from_slice(&[0u8; 6]);
    for (id, v) in store.iter() {
        let len = u16::try_from(id.len()).map_err(|_| FormatError::IdTooLong { len: id.len() })?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_store(bytes: &[u8]) -> Result<EmbeddingStore, FormatError> {
    let mut c = Cursor::new(bytes);
    check_magic(&mut c, STORE_MAGIC)?;
    let version = c.u32()?;
    if version != STORE_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let count = c.u64()?;
    let dim = c.u32()? as usize;
    let metric_offset = c.pos();
    let metric = match c.u8()? {
        0 => SimilarityMetric::Dot,
        1 => SimilarityMetric::Cosine,
        code => {
            return Err(FormatError::UnknownMetric {
                offset: metric_offset,
                code,
            })
        }
    };
    let generator = c.u8()?;
    let reserved_offset = c.pos();
    if let Some(i) = c.array::<6>()?.iter().position(|b| *b != 0) {
        return Err(FormatError::Reserved {
            offset: reserved_offset + i,
        });
    }
    if dim == 0 {
        return Err(FormatError::Embedding(EmbeddingError::ZeroDim));
    }
    // each record takes at least 2 + 4*dim bytes; reject absurd counts before allocating
    let min_record = 2 + 4 * dim as u64;
    if count.saturating_mul(min_record) > c.remaining() as u64 {
        return Err(FormatError::Truncated {
            offset: bytes.len(),
            needed: (count.saturating_mul(min_record) - c.remaining() as u64)
                .try_into()
                .unwrap_or(usize::MAX),
        });
    }
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = c.u16()? as usize;
        let id_offset = c.pos();
        let id = std::str::from_utf8(c.take(len)?)
            .map_err(|_| FormatError::BadId { offset: id_offset })?
            .to_string();
        entries.push((id, c.f32s(dim)?));
    }
    c.finish()?;
    Ok(EmbeddingStore::from_entries(dim, metric, entries)?.with_generator(generator))
}

pub fn write_store(path: impl AsRef<Path>, store: &EmbeddingStore) -> Result<(), FormatError> {
    let path = path.as_ref();
    fs::write(path, encode_store(store)?).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_store(path: impl AsRef<Path>) -> Result<EmbeddingStore, FormatError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_store(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> EmbeddingStore {
        EmbeddingStore::from_entries(
            2,
            SimilarityMetric::Cosine,
            vec![
                ("b".to_string(), vec![0.0, 1.0]),
                ("a".to_string(), vec![1.0, -0.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode_store(&toy()).unwrap();
        assert_eq!(&bytes[..4], b"MMNB");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..16], &2u64.to_le_bytes());
        assert_eq!(&bytes[16..20], &2u32.to_le_bytes());
        assert_eq!(bytes[20], 1);
        assert_eq!(&bytes[22..28], &[0; 6]);
        assert_eq!(&bytes[28..30], &1u16.to_le_bytes());
        assert_eq!(bytes[30], b'a');
        assert_eq!(bytes.len(), STORE_HEADER_LEN + 2 * (2 + 1 + 8));
    }

    #[test]
    fn round_trip_keeps_bits() {
        let store = toy().with_generator(1);
        let bytes = encode_store(&store).unwrap();
        let back = decode_store(&bytes).unwrap();
        assert_eq!(back.generator(), 1);
        assert_eq!(back.get("a").unwrap()[1].to_bits(), (-0.0f32).to_bits());
        assert_eq!(encode_store(&back).unwrap(), bytes);
    }

    #[test]
    fn empty_store_is_header_only() {
        let empty = EmbeddingStore::from_entries(8, SimilarityMetric::Dot, Vec::new()).unwrap();
        let bytes = encode_store(&empty).unwrap();
        assert_eq!(bytes.len(), STORE_HEADER_LEN);
        assert_eq!(decode_store(&bytes).unwrap(), empty);
    }

    #[test]
    fn corrupted_inputs() {
        let bytes = encode_store(&toy()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_store(&bad), Err(FormatError::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_store(&bad), Err(FormatError::UnsupportedVersion(9))));
        let mut bad = bytes.clone();
        bad[20] = 7;
        assert!(matches!(
            decode_store(&bad),
            Err(FormatError::UnknownMetric { offset: 20, code: 7 })
        ));
        let mut bad = bytes.clone();
        bad[25] = 1;
        assert!(matches!(decode_store(&bad), Err(FormatError::Reserved { offset: 25 })));
        assert!(matches!(
            decode_store(&bytes[..bytes.len() - 1]),
            Err(FormatError::Truncated { .. })
        ));
        assert!(matches!(decode_store(&bytes[..10]), Err(FormatError::Truncated { offset: 10, .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_store(&long), Err(FormatError::TrailingBytes { trailing: 1, .. })));
        let mut huge = bytes.clone();
        huge[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(decode_store(&huge), Err(FormatError::Truncated { .. })));
        let mut bad_id = bytes.clone();
        bad_id[30] = 0xff;
        assert!(matches!(decode_store(&bad_id), Err(FormatError::BadId { offset: 30 })));
    }
}
