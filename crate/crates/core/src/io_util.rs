//! Little-endian readers and writers shared by the binary formats.

use std::io::{self, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

fn read_exact_or_truncated(
    input: &mut impl Read,
    buf: &mut [u8],
    origin: &Path,
    what: &str,
) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Truncated {
            path: origin.to_path_buf(),
            detail: format!("while reading {what}"),
        },
        _ => Error::io(origin, e),
    })
}

pub(crate) fn read_magic(input: &mut impl Read, magic: &[u8; 8], origin: &Path) -> Result<()> {
    let mut buf = [0u8; 8];
    read_exact_or_truncated(input, &mut buf, origin, "magic")?;
    if &buf != magic {
        return Err(Error::BadMagic {
            path: origin.to_path_buf(),
            expected: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    Ok(())
}

pub(crate) fn read_u32(input: &mut impl Read, origin: &Path, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact_or_truncated(input, &mut buf, origin, what)?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_f64s(input: &mut impl Read, count: usize, origin: &Path, what: &str) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    read_exact_or_truncated(input, &mut buf, origin, what)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub(crate) fn read_f32s(input: &mut impl Read, count: usize, origin: &Path, what: &str) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; count * 4];
    read_exact_or_truncated(input, &mut buf, origin, what)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub(crate) fn write_f64s(out: &mut impl Write, values: &[f64]) -> io::Result<()> {
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn write_f32s(out: &mut impl Write, values: impl IntoIterator<Item = f32>) -> io::Result<()> {
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Errors if anything is left in `input`.
pub(crate) fn expect_eof(input: &mut impl Read, origin: &Path) -> Result<()> {
    let mut probe = [0u8; 1];
    match input.read(&mut probe) {
        Ok(0) => Ok(()),
        Ok(_) => Err(Error::Inconsistent {
            path: origin.to_path_buf(),
            detail: "trailing bytes after payload".into(),
        }),
        Err(e) => Err(Error::io(origin, e)),
    }
}
