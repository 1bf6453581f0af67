// SPDX-License-Identifier: Apache-2.0

//! Salted, iterated SHA-256 PIN stretching.
//!
//! ```text
//! initial = SHA256(SHA256(UTF-16LE(pin)))
//! record  = last[32] | initial[32] | salt[16] | counter u64 LE   (88 bytes)
//! for counter in 0..rounds: last = SHA256(record)
//! ```
//!
//! `last` starts zeroed. The 88-byte record always spans two SHA-256 blocks:
//! `last | initial` fills the first, `salt | counter` plus padding the second,
//! so the loop drives the compression function directly.

use std::cell::Cell;

use sha2::digest::generic_array::GenericArray;

use super::FdeError;
use crate::crypto::sha256;

pub const DEFAULT_STRETCH_ROUNDS: u32 = 1 << 20;
pub const SALT_LEN: usize = 16;
const RECORD_LEN: usize = 88;

const SHA256_IV: [u32; 8] = [
    0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a, 0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19,
];

thread_local! {
    static STRETCH_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of `stretch_pin` calls made on the current thread.
pub fn stretch_invocations() -> u64 {
    STRETCH_CALLS.with(Cell::get)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StretchParams {
    pub salt: [u8; SALT_LEN],
    pub rounds: u32,
}

impl StretchParams {
    pub fn new(salt: [u8; SALT_LEN]) -> Self {
        Self {
            salt,
            rounds: DEFAULT_STRETCH_ROUNDS,
        }
    }

    /// Stretch datum payload: `salt[16] | rounds u32 LE`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.salt.to_vec();
        out.extend_from_slice(&self.rounds.to_le_bytes());
        out
    }

    pub fn from_bytes(payload: &[u8]) -> Result<Self, FdeError> {
        if payload.len() != SALT_LEN + 4 {
            return Err(FdeError::FormatError(format!(
                "stretch datum of {} bytes, expected {}",
                payload.len(),
                SALT_LEN + 4
            )));
        }
        let rounds = u32::from_le_bytes(payload[SALT_LEN..].try_into().unwrap());
        if rounds == 0 {
            return Err(FdeError::FormatError("stretch datum with zero rounds".into()));
        }
        Ok(Self {
            salt: payload[..SALT_LEN].try_into().unwrap(),
            rounds,
        })
    }
}

pub(crate) fn initial_pin_hash(pin: &str) -> [u8; 32] {
    let utf16: Vec<u8> = pin.encode_utf16().flat_map(u16::to_le_bytes).collect();
    *sha256(sha256(&utf16).as_bytes()).as_bytes()
}

pub fn stretch_pin(pin: &str, params: &StretchParams) -> Result<[u8; 32], FdeError> {
    if pin.is_empty() {
        return Err(FdeError::InvalidPin);
    }
    STRETCH_CALLS.with(|c| c.set(c.get() + 1));
    let initial = initial_pin_hash(pin);

    let mut blocks = [GenericArray::default(), GenericArray::default()];
    blocks[0][32..].copy_from_slice(&initial);
    blocks[1][..SALT_LEN].copy_from_slice(&params.salt);
    blocks[1][24] = 0x80;
    blocks[1][56..].copy_from_slice(&((RECORD_LEN as u64) * 8).to_be_bytes());

    let mut last = [0u8; 32];
    for counter in 0..u64::from(params.rounds) {
        blocks[0][..32].copy_from_slice(&last);
        blocks[1][16..24].copy_from_slice(&counter.to_le_bytes());
        let mut state = SHA256_IV;
        sha2::compress256(&mut state, &blocks);
        for (out, word) in last.chunks_exact_mut(4).zip(state) {
            out.copy_from_slice(&word.to_be_bytes());
        }
    }
    Ok(last)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straight re-composition from whole-message SHA-256 calls.
    fn stretch_oracle(pin: &str, salt: [u8; 16], rounds: u32) -> [u8; 32] {
        let utf16: Vec<u8> = pin.encode_utf16().flat_map(|u| u.to_le_bytes()).collect();
        let initial = sha256(sha256(&utf16).as_bytes());
        let mut last = [0u8; 32];
        for counter in 0..u64::from(rounds) {
            let mut record = Vec::with_capacity(RECORD_LEN);
            record.extend_from_slice(&last);
            record.extend_from_slice(initial.as_bytes());
            record.extend_from_slice(&salt);
            record.extend_from_slice(&counter.to_le_bytes());
            assert_eq!(record.len(), RECORD_LEN);
            last = *sha256(&record).as_bytes();
        }
        last
    }

    #[test]
    fn matches_oracle_at_reduced_rounds() {
        let salt = [0x5a; 16];
        for rounds in [1, 2, 4, 37] {
            let params = StretchParams { salt, rounds };
            assert_eq!(stretch_pin("1234", &params).unwrap(), stretch_oracle("1234", salt, rounds));
        }
        let params = StretchParams { salt, rounds: 4 };
        assert_ne!(stretch_pin("1234", &params).unwrap(), stretch_pin("1235", &params).unwrap());
        assert_eq!(stretch_pin("1234", &params).unwrap(), stretch_pin("1234", &params).unwrap());
    }

    #[test]
    fn non_ascii_pins_are_utf16() {
        let params = StretchParams { salt: [1; 16], rounds: 3 };
        assert_eq!(stretch_pin("pä𝄞", &params).unwrap(), stretch_oracle("pä𝄞", [1; 16], 3));
    }

    #[test]
    fn empty_pin_rejected() {
        assert_eq!(stretch_pin("", &StretchParams::new([0; 16])), Err(FdeError::InvalidPin));
    }

    #[test]
    fn params_payload() {
        let p = StretchParams::new([7; 16]);
        assert_eq!(p.rounds, 1_048_576);
        assert_eq!(StretchParams::from_bytes(&p.to_bytes()).unwrap(), p);
        assert!(StretchParams::from_bytes(&[0; 19]).is_err());
        assert!(StretchParams::from_bytes(&[0; 20]).is_err());
    }

    #[test]
    fn invocation_counter_is_per_thread() {
        let before = stretch_invocations();
        stretch_pin("1", &StretchParams { salt: [0; 16], rounds: 1 }).unwrap();
        assert_eq!(stretch_invocations(), before + 1);
    }
}
