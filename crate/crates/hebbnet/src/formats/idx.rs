//! IDX arrays of unsigned bytes, optionally gzip-compressed.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];
const UBYTE: u8 = 0x08;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Reads the whole file, inflating it first when it starts with the gzip magic.
pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(|e| Error::data(path, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

pub fn parse(bytes: &[u8], expected_magic: u32, path: &Path) -> Result<IdxArray> {
    let word = |offset: usize| -> Result<u32> {
        bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| Error::data(path, format!("truncated header at offset {offset}")))
    };
    let magic = word(0)?;
    if magic != expected_magic {
        return Err(Error::data(path, format!("magic {magic:#010x} at offset 0, expected {expected_magic:#010x}")));
    }
    if (magic >> 8) as u8 != UBYTE {
        return Err(Error::data(
            path,
            format!("element type {:#04x} at offset 2 is not unsigned byte", (magic >> 8) as u8),
        ));
    }
    let rank = (magic & 0xff) as usize;
    let dims = (0..rank).map(|i| word(4 + 4 * i).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * rank;
    let len: usize = dims.iter().product();
    let body = &bytes[header.min(bytes.len())..];
    if body.len() != len {
        return Err(Error::data(
            path,
            format!("dimensions {dims:?} need {len} bytes after offset {header}, found {}", body.len()),
        ));
    }
    Ok(IdxArray { dims, data: body.to_vec() })
}

pub fn read(path: &Path, expected_magic: u32) -> Result<IdxArray> {
    parse(&read_bytes(path)?, expected_magic, path)
}

pub fn encode(array: &IdxArray) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * array.dims.len() + array.data.len());
    out.extend_from_slice(&[0, 0, UBYTE, array.dims.len() as u8]);
    for &d in &array.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}

pub fn write(path: &Path, array: &IdxArray) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(array)).map_err(|e| Error::io(path, e))
}
