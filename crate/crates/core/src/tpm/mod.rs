// SPDX-License-Identifier: Apache-2.0

//! TPM 2.0 sealed objects and PCRs, restricted to the SHA-256 / AES-128
//! profile.

mod object;
mod pcr;

pub use object::*;
pub use pcr::*;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TpmError {
    #[error("format error: {0}")]
    FormatError(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("PCR index {0} out of range")]
    BadPcrIndex(usize),
    #[error("PCR policy selects no registers")]
    EmptySelection,
    #[error("integrity check failed: wrong parent seed or tampered object")]
    WrongSeedOrTampered,
    #[error("no primary seed in the searched buffer verifies the object")]
    NotFound,
}

/// Big-endian reader for TPM marshalled structures.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], TpmError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            TpmError::FormatError(format!("{}: truncated at byte {}", self.what, self.pos))
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, TpmError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16, TpmError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, TpmError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    /// A 16-bit length-prefixed buffer.
    pub(crate) fn sized(&mut self) -> Result<&'a [u8], TpmError> {
        let len = self.u16()?;
        self.take(usize::from(len))
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn finish(self) -> Result<(), TpmError> {
        if self.pos != self.buf.len() {
            return Err(TpmError::FormatError(format!(
                "{}: {} trailing bytes",
                self.what,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub(crate) fn put_sized(out: &mut Vec<u8>, bytes: &[u8]) -> Result<(), TpmError> {
    let len = u16::try_from(bytes.len())
        .map_err(|_| TpmError::FormatError(format!("{} bytes exceed a 16-bit size", bytes.len())))?;
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(bytes);
    Ok(())
}
