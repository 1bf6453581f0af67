// SPDX-License-Identifier: Apache-2.0

//! Strict hex and file I/O helpers.

use std::path::Path;

use crate::error::CliError;

/// Lowercase, unprefixed, even-length hex; `len` pins the decoded size.
pub fn parse_hex(what: &str, text: &str, len: Option<usize>) -> Result<Vec<u8>, CliError> {
    if text.bytes().any(|b| !matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
        return Err(CliError::usage(format!("{what}: expected lowercase hex digits without prefix")));
    }
    let bytes = hex::decode(text).map_err(|e| CliError::usage(format!("{what}: {e}")))?;
    match len {
        Some(n) if bytes.len() != n => Err(CliError::usage(format!(
            "{what}: expected {n} bytes ({} hex digits), got {}",
            2 * n,
            bytes.len()
        ))),
        _ => Ok(bytes),
    }
}

pub fn parse_hex_array<const N: usize>(what: &str, text: &str) -> Result<[u8; N], CliError> {
    Ok(parse_hex(what, text, Some(N))?.try_into().expect("length checked"))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strictness() {
        assert_eq!(parse_hex("x", "00ff", Some(2)).unwrap(), vec![0, 255]);
        assert!(parse_hex("x", "00FF", None).is_err());
        assert!(parse_hex("x", "0x00", None).is_err());
        assert!(parse_hex("x", "abc", None).is_err());
        assert!(parse_hex("x", "00", Some(2)).is_err());
        assert_eq!(parse_hex("x", "", None).unwrap(), Vec::<u8>::new());
    }
}
