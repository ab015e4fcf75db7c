//! Little-endian read/write primitives shared by the binary file codecs.
//!
//! Every reader distinguishes truncation (unexpected end of input) from
//! other I/O failures so the codecs can reject short files explicitly.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) fn write_u16<W: Write>(w: &mut W, v: u16) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_f32<W: Write>(w: &mut W, v: f32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(format!("truncated while reading {what}"))
        } else {
            Error::Io(e)
        }
    })
}

pub(crate) fn read_u16<R: Read>(r: &mut R, what: &str) -> Result<u16> {
    let mut buf = [0u8; 2];
    read_exact_or_truncated(r, &mut buf, what)?;
    Ok(u16::from_le_bytes(buf))
}

pub(crate) fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact_or_truncated(r, &mut buf, what)?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact_or_truncated(r, &mut buf, what)?;
    Ok(u64::from_le_bytes(buf))
}

pub(crate) fn read_f32<R: Read>(r: &mut R, what: &str) -> Result<f32> {
    let mut buf = [0u8; 4];
    read_exact_or_truncated(r, &mut buf, what)?;
    Ok(f32::from_le_bytes(buf))
}

pub(crate) fn read_bytes<R: Read>(r: &mut R, len: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; len];
    read_exact_or_truncated(r, &mut buf, what)?;
    Ok(buf)
}

/// Reads a fixed 4-byte magic and rejects anything else.
pub(crate) fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let got = read_bytes(r, 4, "magic")?;
    if got != magic {
        let want = String::from_utf8_lossy(magic).into_owned();
        return Err(Error::format(format!("bad magic: expected {want:?}")));
    }
    Ok(())
}

/// Fails if the reader still has bytes left; catches padded or overlong files.
pub(crate) fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::format("trailing bytes after payload")),
    }
}
