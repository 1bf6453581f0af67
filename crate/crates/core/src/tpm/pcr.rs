// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use super::{Reader, TpmError};
use crate::crypto::{sha256, Digest256};

pub const PCR_COUNT: usize = 24;

/// A bank of SHA-256 platform configuration registers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PcrBank {
    registers: [Digest256; PCR_COUNT],
}

impl Default for PcrBank {
    fn default() -> Self {
        Self::new()
    }
}

impl PcrBank {
    /// All registers zero, as after a platform reset.
    pub fn new() -> Self {
        Self {
            registers: [Digest256::new([0; 32]); PCR_COUNT],
        }
    }

    pub fn get(&self, index: usize) -> Result<&Digest256, TpmError> {
        self.registers.get(index).ok_or(TpmError::BadPcrIndex(index))
    }

    pub fn registers(&self) -> &[Digest256; PCR_COUNT] {
        &self.registers
    }

    /// `PCR[index] = SHA256(PCR[index] || value)`.
    pub fn extend(&mut self, index: usize, value: &[u8]) -> Result<(), TpmError> {
        let register = self.registers.get_mut(index).ok_or(TpmError::BadPcrIndex(index))?;
        let mut input = Vec::with_capacity(32 + value.len());
        input.extend_from_slice(register.as_bytes());
        input.extend_from_slice(value);
        *register = sha256(&input);
        Ok(())
    }

    pub fn reset(&mut self) {
        *self = Self::new();
    }
}

/// Expected values for a non-empty selection of registers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PcrPolicy {
    expected: BTreeMap<u8, Digest256>,
}

impl PcrPolicy {
    pub fn new(expected: BTreeMap<u8, Digest256>) -> Result<Self, TpmError> {
        if expected.is_empty() {
            return Err(TpmError::EmptySelection);
        }
        if let Some(&bad) = expected.keys().find(|&&i| usize::from(i) >= PCR_COUNT) {
            return Err(TpmError::BadPcrIndex(bad.into()));
        }
        Ok(Self { expected })
    }

    /// Snapshot of `bank` over `selection`.
    pub fn from_bank(bank: &PcrBank, selection: &[u8]) -> Result<Self, TpmError> {
        let mut expected = BTreeMap::new();
        for &i in selection {
            expected.insert(i, *bank.get(usize::from(i))?);
        }
        Self::new(expected)
    }

    pub fn selection(&self) -> impl Iterator<Item = u8> + '_ {
        self.expected.keys().copied()
    }

    pub fn expected(&self) -> &BTreeMap<u8, Digest256> {
        &self.expected
    }

    /// `u8 count | count x (u8 index | digest[32])`, indices ascending.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + 33 * self.expected.len());
        out.push(self.expected.len() as u8);
        for (index, digest) in &self.expected {
            out.push(*index);
            out.extend_from_slice(digest.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TpmError> {
        let mut r = Reader::new(bytes, "PCR policy");
        let count = r.u8()?;
        let mut expected = BTreeMap::new();
        for _ in 0..count {
            let index = r.u8()?;
            let digest = Digest256::from_slice(r.take(32)?)?;
            if expected.insert(index, digest).is_some() {
                return Err(TpmError::FormatError(format!("PCR {index} selected twice")));
            }
        }
        r.finish()?;
        Self::new(expected)
    }

    /// Digest standing in for the object's authorization policy. This is a
    /// plain hash of the serialized policy, not TPM2_PolicyPCR arithmetic.
    pub fn digest(&self) -> Digest256 {
        sha256(&self.to_bytes())
    }
}

pub fn check_pcr_policy(bank: &PcrBank, policy: &PcrPolicy) -> bool {
    policy
        .expected
        .iter()
        .all(|(&i, digest)| bank.registers[usize::from(i)] == *digest)
}
