//! Token embedding sets and the `.tokemb` binary container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! offset  size        field
//! 0       8           magic "TOKEMB01"
//! 8       8           N   (u64, images)
//! 16      4           L   (u32, tokens per image)
//! 20      4           d   (u32, embedding width)
//! 24      4·N·L·d     f32 payload, image-major, token-major, dimension-minor
//! ...     8           id block length in bytes (u64), excluding this field
//! ...     N × (4 + n) per image: id byte length (u32) then UTF-8 bytes
//! ```
//!
//! Nothing may follow the id block.

use std::collections::HashSet;
use std::io::{self, Read, Write};

use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"TOKEMB01";
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("write failed at byte offset {offset}: {source}")]
    Write { offset: u64, source: io::Error },
    #[error("read failed: {0}")]
    Read(#[from] io::Error),
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: String, expected: String },
    #[error("truncated input: expected at least {expected} bytes, found {actual} (short by {})", expected - actual)]
    Truncated { expected: u64, actual: u64 },
    #[error("{extra} unexpected trailing bytes after the id block")]
    TrailingBytes { extra: u64 },
    #[error("non-finite value at image {image}, token {token}, dim {dim}")]
    NonFinite {
        image: usize,
        token: usize,
        dim: usize,
    },
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("duplicate image id {0:?}")]
    DuplicateId(String),
    #[error("image id {image} is not valid UTF-8")]
    InvalidUtf8 { image: usize },
}

/// Per-image grids of `L` spatial tokens of width `d`, stored contiguously
/// as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingSet {
    tokens_per_image: usize,
    dim: usize,
    data: Vec<f32>,
    image_ids: Vec<String>,
}

impl TokenEmbeddingSet {
    /// Builds a set, checking shape, id uniqueness and finiteness.
    pub fn new(
        tokens_per_image: usize,
        dim: usize,
        data: Vec<f32>,
        image_ids: Vec<String>,
    ) -> Result<Self, FormatError> {
        let n = image_ids.len();
        if n == 0 || tokens_per_image == 0 || dim == 0 {
            return Err(FormatError::Shape(format!(
                "N={n}, L={tokens_per_image}, d={dim}; all must be at least 1"
            )));
        }
        let expected = n
            .checked_mul(tokens_per_image)
            .and_then(|x| x.checked_mul(dim))
            .ok_or_else(|| FormatError::Shape("N·L·d overflows".into()))?;
        if data.len() != expected {
            return Err(FormatError::Shape(format!(
                "data holds {} values but N·L·d = {expected}",
                data.len()
            )));
        }
        check_finite(&data, tokens_per_image, dim)?;
        let mut seen = HashSet::with_capacity(n);
        for id in &image_ids {
            if !seen.insert(id.as_str()) {
                return Err(FormatError::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            tokens_per_image,
            dim,
            data,
            image_ids,
        })
    }

    pub fn num_images(&self) -> usize {
        self.image_ids.len()
    }

    pub fn tokens_per_image(&self) -> usize {
        self.tokens_per_image
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_tokens(&self) -> usize {
        self.num_images() * self.tokens_per_image
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    /// All `L·d` values of image `i`.
    pub fn image(&self, i: usize) -> &[f32] {
        let stride = self.tokens_per_image * self.dim;
        &self.data[i * stride..(i + 1) * stride]
    }

    /// Token `j` of image `i`.
    pub fn token(&self, i: usize, j: usize) -> &[f32] {
        let start = (i * self.tokens_per_image + j) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Token by flat index over all `N·L` tokens.
    pub fn flat_token(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// Same set with every value multiplied by `c`.
    pub fn scaled(&self, c: f32) -> Result<Self, FormatError> {
        Self::new(
            self.tokens_per_image,
            self.dim,
            self.data.iter().map(|x| x * c).collect(),
            self.image_ids.clone(),
        )
    }
}

fn check_finite(data: &[f32], l: usize, d: usize) -> Result<(), FormatError> {
    match data.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(p) => Err(FormatError::NonFinite {
            image: p / (l * d),
            token: (p / d) % l,
            dim: p % d,
        }),
    }
}

struct CountingWriter<W> {
    inner: W,
    written: u64,
}

impl<W: Write> CountingWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> Result<(), FormatError> {
        self.inner
            .write_all(bytes)
            .map_err(|source| FormatError::Write {
                offset: self.written,
                source,
            })?;
        self.written += bytes.len() as u64;
        Ok(())
    }
}

/// Serialises `set` in the `.tokemb` layout.
pub fn write_embeddings<W: Write>(set: &TokenEmbeddingSet, sink: W) -> Result<(), FormatError> {
    let mut w = CountingWriter {
        inner: sink,
        written: 0,
    };
    w.put(MAGIC)?;
    w.put(&(set.num_images() as u64).to_le_bytes())?;
    w.put(&(set.tokens_per_image as u32).to_le_bytes())?;
    w.put(&(set.dim as u32).to_le_bytes())?;

    let mut buf = Vec::with_capacity(4 * 4096);
    for chunk in set.data.chunks(4096) {
        buf.clear();
        for x in chunk {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.put(&buf)?;
    }

    let block_len: u64 = set.image_ids.iter().map(|s| 4 + s.len() as u64).sum();
    w.put(&block_len.to_le_bytes())?;
    for id in &set.image_ids {
        w.put(&(id.len() as u32).to_le_bytes())?;
        w.put(id.as_bytes())?;
    }
    w.inner.flush().map_err(|source| FormatError::Write {
        offset: w.written,
        source,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(FormatError::Truncated {
                expected: self.pos as u64 + n as u64,
                actual: self.bytes.len() as u64,
            }),
        }
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses a `.tokemb` stream, rejecting malformed or non-finite content.
pub fn read_embeddings<R: Read>(mut source: R) -> Result<TokenEmbeddingSet, FormatError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    parse_embeddings(&bytes)
}

pub fn parse_embeddings(bytes: &[u8]) -> Result<TokenEmbeddingSet, FormatError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(8)?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic {
            found: String::from_utf8_lossy(magic).into_owned(),
            expected: String::from_utf8_lossy(MAGIC).into_owned(),
        });
    }
    let n = cur.u64()?;
    let l = cur.u32()? as u64;
    let d = cur.u32()? as u64;
    if n == 0 || l == 0 || d == 0 {
        return Err(FormatError::Shape(format!(
            "header declares N={n}, L={l}, d={d}"
        )));
    }
    let payload = n
        .checked_mul(l)
        .and_then(|x| x.checked_mul(d))
        .and_then(|x| x.checked_mul(4))
        .filter(|&x| x <= usize::MAX as u64)
        .ok_or_else(|| FormatError::Shape("declared payload size overflows".into()))?;
    // The id block adds at least 8 + 4·N bytes beyond the payload.
    let minimum = HEADER_LEN as u64 + payload + 8 + 4 * n;
    if (bytes.len() as u64) < minimum {
        return Err(FormatError::Truncated {
            expected: minimum,
            actual: bytes.len() as u64,
        });
    }
    let raw = cur.take(payload as usize)?;
    let data: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    check_finite(&data, l as usize, d as usize)?;

    let block_len = cur.u64()?;
    let block_start = cur.pos as u64;
    let block_end = block_start + block_len;
    if block_end > bytes.len() as u64 {
        return Err(FormatError::Truncated {
            expected: block_end,
            actual: bytes.len() as u64,
        });
    }
    let mut ids = Vec::with_capacity(n as usize);
    for image in 0..n as usize {
        let len = cur.u32()? as usize;
        let raw = cur.take(len)?;
        let id = std::str::from_utf8(raw).map_err(|_| FormatError::InvalidUtf8 { image })?;
        ids.push(id.to_owned());
    }
    if cur.pos as u64 != block_end {
        return Err(FormatError::Shape(format!(
            "id block declares {block_len} bytes but ids occupy {}",
            cur.pos as u64 - block_start
        )));
    }
    if cur.pos < bytes.len() {
        return Err(FormatError::TrailingBytes {
            extra: (bytes.len() - cur.pos) as u64,
        });
    }
    TokenEmbeddingSet::new(l as usize, d as usize, data, ids)
}
