//! Little-endian helpers shared by the binary containers.

use byteorder::{ByteOrder, LittleEndian};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// First 8 bytes of the SHA-256 digest, read little-endian.
pub(crate) fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    LittleEndian::read_u64(&digest[..8])
}

/// Reads the leading magic bytes, padding short inputs with zeros.
pub(crate) fn check_magic(bytes: &[u8], expected: [u8; 4]) -> Result<()> {
    let mut found = [0u8; 4];
    let head = bytes.len().min(4);
    found[..head].copy_from_slice(&bytes[..head]);
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

/// Splits off and verifies the trailing checksum once the body has been read
/// up to `body_end`.
pub(crate) fn check_trailer(cur: &mut Cursor<'_>) -> Result<()> {
    let body_end = cur.pos;
    let stored = cur.u64("checksum")?;
    if cur.pos != cur.bytes.len() {
        return Err(Error::invalid(format!(
            "{} trailing bytes after checksum",
            cur.bytes.len() - cur.pos
        )));
    }
    let computed = checksum(&cur.bytes[..body_end]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Ok(())
}

pub(crate) struct Cursor<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8], pos: usize) -> Self {
        Cursor { bytes, pos }
    }

    pub fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if n > self.bytes.len() - self.pos {
            return Err(Error::Truncated(what));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(LittleEndian::read_u16(self.take(2, what)?))
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4, what)?))
    }

    pub fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(LittleEndian::read_u64(self.take(8, what)?))
    }

    pub fn f32(&mut self, what: &'static str) -> Result<f32> {
        Ok(LittleEndian::read_f32(self.take(4, what)?))
    }

    pub fn f64(&mut self, what: &'static str) -> Result<f64> {
        Ok(LittleEndian::read_f64(self.take(8, what)?))
    }

    /// A u16-length-prefixed utf-8 string.
    pub fn str(&mut self, what: &'static str) -> Result<&'a str> {
        let len = self.u16(what)? as usize;
        std::str::from_utf8(self.take(len, what)?)
            .map_err(|_| Error::invalid(format!("{what} is not utf-8")))
    }
}
