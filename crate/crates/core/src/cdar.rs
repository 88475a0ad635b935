//! The `CDAR` array container.
//!
//! Layout: magic `b"CDAR"`, version byte (1), dtype byte (1 = f32 LE,
//! 2 = u8), ndim byte, `ndim` little-endian u32 dims, then the row-major
//! payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CDAR";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;
pub const DTYPE_U8: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> u8 {
        match self {
            ArrayData::F32(_) => DTYPE_F32,
            ArrayData::U8(_) => DTYPE_U8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

/// Header fields, available without reading the payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub dtype: u8,
    pub shape: Vec<usize>,
}

impl Header {
    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    fn element_size(&self) -> usize {
        if self.dtype == DTYPE_F32 {
            4
        } else {
            1
        }
    }

    pub fn payload_bytes(&self) -> usize {
        self.element_count() * self.element_size()
    }
}

impl Array {
    pub fn f32(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Array {
            shape,
            data: ArrayData::F32(data),
        }
    }

    pub fn u8(shape: Vec<usize>, data: Vec<u8>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Array {
            shape,
            data: ArrayData::U8(data),
        }
    }

    pub fn into_f32(self) -> Option<Vec<f32>> {
        match self.data {
            ArrayData::F32(v) => Some(v),
            ArrayData::U8(_) => None,
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut head = Vec::with_capacity(7 + 4 * self.shape.len());
        head.extend_from_slice(MAGIC);
        head.push(VERSION);
        head.push(self.data.dtype());
        head.push(self.shape.len() as u8);
        for &d in &self.shape {
            head.extend_from_slice(&(d as u32).to_le_bytes());
        }
        w.write_all(&head)?;
        match &self.data {
            ArrayData::F32(v) => {
                let mut buf = Vec::with_capacity(v.len() * 4);
                for x in v {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
                w.write_all(&buf)
            }
            ArrayData::U8(v) => w.write_all(v),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Reads one array. `path` only labels errors.
    pub fn read_from<R: Read>(r: &mut R, path: &Path) -> Result<Array> {
        let header = read_header(r, path)?;
        let expected = header.payload_bytes();
        let mut payload = Vec::with_capacity(expected);
        r.take(expected as u64)
            .read_to_end(&mut payload)
            .map_err(|e| Error::io(path, e))?;
        if payload.len() != expected {
            return Err(Error::TruncatedPayload {
                path: path.to_path_buf(),
                expected,
                found: payload.len(),
            });
        }
        let data = if header.dtype == DTYPE_F32 {
            ArrayData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            )
        } else {
            ArrayData::U8(payload)
        };
        Ok(Array {
            shape: header.shape,
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Loads a file holding exactly one array; trailing bytes are rejected.
    pub fn load(path: &Path) -> Result<Array> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(f);
        let arr = Array::read_from(&mut r, path)?;
        let mut rest = [0u8; 1];
        match r.read(&mut rest) {
            Ok(0) => Ok(arr),
            Ok(_) => Err(Error::MalformedHeader {
                path: path.to_path_buf(),
                reason: "trailing bytes after payload".into(),
            }),
            Err(e) => Err(Error::io(path, e)),
        }
    }
}

pub fn read_header<R: Read>(r: &mut R, path: &Path) -> Result<Header> {
    let malformed = |reason: &str| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut fixed = [0u8; 7];
    r.read_exact(&mut fixed)
        .map_err(|_| malformed("file shorter than the fixed header"))?;
    if &fixed[..4] != MAGIC {
        return Err(malformed("bad magic bytes"));
    }
    if fixed[4] != VERSION {
        return Err(malformed(&format!("unsupported version {}", fixed[4])));
    }
    let dtype = fixed[5];
    if dtype != DTYPE_F32 && dtype != DTYPE_U8 {
        return Err(malformed(&format!("unknown dtype {dtype}")));
    }
    let ndim = fixed[6] as usize;
    let mut dims = vec![0u8; 4 * ndim];
    r.read_exact(&mut dims)
        .map_err(|_| malformed("header truncated inside the dimension list"))?;
    let shape = dims
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    Ok(Header { dtype, shape })
}

/// Reads only the header of a file on disk.
pub fn peek_header(path: &Path) -> Result<Header> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let len = f.metadata().map_err(|e| Error::io(path, e))?.len() as usize;
    let mut r = BufReader::new(f);
    let header = read_header(&mut r, path)?;
    let head_len = 7 + 4 * header.shape.len();
    let found = len.saturating_sub(head_len);
    if found != header.payload_bytes() {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected: header.payload_bytes(),
            found,
        });
    }
    Ok(header)
}
