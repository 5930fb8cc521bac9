//! Versioned binary container shared by dataset and checkpoint files.
//!
//! Layout (little endian):
//!
//! ```text
//! magic[4] | major u16 | minor u16 | patch u16 | payload_len u64 | payload | sha256[32]
//! ```
//!
//! The trailing digest covers every preceding byte, so truncation or
//! corruption anywhere is reported as [`Error::Checksum`].

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const DIGEST_LEN: usize = 32;
const PREFIX_LEN: usize = 4 + 2 * 3 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FormatVersion {
    pub major: u16,
    pub minor: u16,
    pub patch: u16,
}

impl std::fmt::Display for FormatVersion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{}.{}", self.major, self.minor, self.patch)
    }
}

pub fn encode(magic: &[u8; 4], version: FormatVersion, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(PREFIX_LEN + payload.len() + DIGEST_LEN);
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.major.to_le_bytes());
    out.extend_from_slice(&version.minor.to_le_bytes());
    out.extend_from_slice(&version.patch.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Validates framing and returns the payload and the stored version.
///
/// Files with a foreign major version are rejected after the checksum passes.
pub fn decode<'a>(
    magic: &[u8; 4],
    expected_major: u16,
    bytes: &'a [u8],
) -> Result<(FormatVersion, &'a [u8])> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        return Err(Error::Format(format!(
            "missing magic bytes {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    if bytes.len() < PREFIX_LEN + DIGEST_LEN {
        return Err(Error::Checksum);
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum);
    }
    let u16_at = |i: usize| u16::from_le_bytes([body[i], body[i + 1]]);
    let version = FormatVersion {
        major: u16_at(4),
        minor: u16_at(6),
        patch: u16_at(8),
    };
    if version.major != expected_major {
        return Err(Error::VersionMismatch {
            found: version.to_string(),
            expected: expected_major,
        });
    }
    let len = u64::from_le_bytes(body[10..18].try_into().expect("8 bytes")) as usize;
    let payload = &body[PREFIX_LEN..];
    if payload.len() != len {
        return Err(Error::Format(format!(
            "payload length {} does not match header {len}",
            payload.len()
        )));
    }
    Ok((version, payload))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Hex-encoded SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Little-endian cursor over a payload.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("unexpected end of payload".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }
}
