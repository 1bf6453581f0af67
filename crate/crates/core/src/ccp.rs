// SPDX-License-Identifier: Apache-2.0

//! Simulated cryptographic co-processor key storage (the LSB) and the
//! byte-wise extraction of a read-protected slot.
//!
//! The LSB is an array of 16-byte slots, some of which are read-protected.
//! AES jobs take their key from a byte address in the LSB. When unaligned
//! key addresses are allowed, a key window can straddle an attacker-written
//! slot and a protected one, leaving a single unknown key byte that can be
//! brute-forced against a reference ciphertext. Sliding the window one byte
//! at a time recovers the whole protected slot.

use thiserror::Error;

use crate::crypto::{aes128_encrypt_block, Block128, SymKey128};

pub const SLOT_LEN: usize = 16;
pub const DEFAULT_SLOTS: usize = 8;
/// Upper bound on encryptions for one slot when no candidate collides:
/// one reference encryption plus 256 candidates for each of 16 windows.
pub const MAX_EXTRACTION_OPS: usize = SLOT_LEN * (1 + 256);

const PROBE_INPUTS: [[u8; 16]; 4] = [[0x00; 16], [0xFF; 16], [0x5A; 16], [0xA5; 16]];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CcpError {
    #[error("slot {0} is write-protected")]
    WriteProtected(usize),
    #[error("slot {0} is read-protected")]
    ReadProtected(usize),
    #[error("address {0:#x} is outside the LSB")]
    BadAddress(usize),
    #[error("unaligned key address {0:#x} rejected")]
    AlignmentViolation(usize),
    #[error("invalid LSB layout: {0}")]
    InvalidLayout(String),
    #[error("writable slot {writable} is not adjacent to target slot {target}")]
    NotAdjacent { writable: usize, target: usize },
    #[error("no candidate matched in window {window}")]
    ExtractionFailed { window: usize },
    #[error("extraction impossible: {0}")]
    ExtractionImpossible(CcpErrorKind),
}

/// Why an extraction could not even start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcpErrorKind {
    UnalignedKeysRejected,
}

impl std::fmt::Display for CcpErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CcpErrorKind::UnalignedKeysRejected => f.write_str("the CCP rejects unaligned key addresses"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlignmentPolicy {
    /// Zen 1 through Zen 2 behaviour.
    #[default]
    UnalignedAllowed,
    /// Zen 3: key addresses must be slot aligned.
    AlignedOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CcpMode {
    pub alignment_policy: AlignmentPolicy,
}

impl CcpMode {
    pub const fn new(alignment_policy: AlignmentPolicy) -> Self {
        Self { alignment_policy }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AesJob {
    /// Byte address of the first key byte.
    pub key_addr: usize,
    pub input: Block128,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LsbState {
    slots: Vec<[u8; SLOT_LEN]>,
    protected: Vec<bool>,
}

impl LsbState {
    /// `slot_count` slots with the chip secret in protected slot 0 and every
    /// other slot zeroed and writable.
    pub fn new(slot_count: usize, chip_secret: [u8; SLOT_LEN]) -> Result<Self, CcpError> {
        let mut slots = vec![[0u8; SLOT_LEN]; slot_count];
        let mut protected = vec![false; slot_count];
        if slot_count < 2 {
            return Err(CcpError::InvalidLayout(
                "at least two slots are required".into(),
            ));
        }
        slots[0] = chip_secret;
        protected[0] = true;
        Self::with_layout(slots, protected)
    }

    pub fn with_layout(slots: Vec<[u8; SLOT_LEN]>, protected: Vec<bool>) -> Result<Self, CcpError> {
        if slots.is_empty() || slots.len() != protected.len() {
            return Err(CcpError::InvalidLayout(format!(
                "{} slots with {} protection flags",
                slots.len(),
                protected.len()
            )));
        }
        Ok(Self { slots, protected })
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn len_bytes(&self) -> usize {
        self.slots.len() * SLOT_LEN
    }

    pub fn is_protected(&self, slot: usize) -> bool {
        self.protected.get(slot).copied().unwrap_or(false)
    }

    fn check_slot(&self, slot: usize) -> Result<(), CcpError> {
        if slot >= self.slots.len() {
            return Err(CcpError::BadAddress(slot * SLOT_LEN));
        }
        Ok(())
    }

    pub fn write(&mut self, slot: usize, bytes: [u8; SLOT_LEN]) -> Result<(), CcpError> {
        self.check_slot(slot)?;
        if self.protected[slot] {
            return Err(CcpError::WriteProtected(slot));
        }
        self.slots[slot] = bytes;
        Ok(())
    }

    pub fn read(&self, slot: usize) -> Result<[u8; SLOT_LEN], CcpError> {
        self.check_slot(slot)?;
        if self.protected[slot] {
            return Err(CcpError::ReadProtected(slot));
        }
        Ok(self.slots[slot])
    }

    fn key_window(&self, addr: usize) -> Result<[u8; SLOT_LEN], CcpError> {
        if addr + SLOT_LEN > self.len_bytes() {
            return Err(CcpError::BadAddress(addr));
        }
        let mut key = [0u8; SLOT_LEN];
        for (i, byte) in key.iter_mut().enumerate() {
            let at = addr + i;
            *byte = self.slots[at / SLOT_LEN][at % SLOT_LEN];
        }
        Ok(key)
    }

    /// True when the key window mixes protected and unprotected bytes.
    fn window_straddles_protection(&self, addr: usize) -> bool {
        let first = addr / SLOT_LEN;
        let last = addr.div_ceil(SLOT_LEN);
        first != last && self.protected[first] != self.protected[last]
    }
}

/// Runs one AES-128 encryption keyed from the LSB. The key bytes never
/// leave the simulator.
pub fn ccp_aes_encrypt(state: &LsbState, mode: CcpMode, job: &AesJob) -> Result<Block128, CcpError> {
    if mode.alignment_policy == AlignmentPolicy::AlignedOnly && !job.key_addr.is_multiple_of(SLOT_LEN) {
        return Err(CcpError::AlignmentViolation(job.key_addr));
    }
    let key = state.key_window(job.key_addr)?;
    Ok(aes128_encrypt_block(&SymKey128::new(key), &job.input))
}

/// What an attacker can do with the co-processor: write unprotected slots
/// and run AES jobs. There is no read path.
pub trait EncryptOracle {
    fn write_slot(&mut self, slot: usize, bytes: [u8; SLOT_LEN]) -> Result<(), CcpError>;
    fn encrypt(&mut self, job: &AesJob) -> Result<Block128, CcpError>;
}

/// The simulated device: LSB contents, alignment policy and counters.
#[derive(Debug, Clone)]
pub struct Ccp {
    lsb: LsbState,
    mode: CcpMode,
    jobs: usize,
    straddling_jobs: usize,
}

impl Ccp {
    pub fn new(lsb: LsbState, mode: CcpMode) -> Self {
        Self {
            lsb,
            mode,
            jobs: 0,
            straddling_jobs: 0,
        }
    }

    pub fn lsb(&self) -> &LsbState {
        &self.lsb
    }

    pub fn mode(&self) -> CcpMode {
        self.mode
    }

    /// Successful AES jobs run so far.
    pub fn jobs(&self) -> usize {
        self.jobs
    }

    /// Successful jobs whose key mixed protected and unprotected bytes; each
    /// of these leaks information about protected bytes.
    pub fn partial_key_disclosures(&self) -> usize {
        self.straddling_jobs
    }
}

impl EncryptOracle for Ccp {
    fn write_slot(&mut self, slot: usize, bytes: [u8; SLOT_LEN]) -> Result<(), CcpError> {
        self.lsb.write(slot, bytes)
    }

    fn encrypt(&mut self, job: &AesJob) -> Result<Block128, CcpError> {
        let out = ccp_aes_encrypt(&self.lsb, self.mode, job)?;
        self.jobs += 1;
        if self.lsb.window_straddles_protection(job.key_addr) {
            self.straddling_jobs += 1;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extraction {
    pub bytes: [u8; SLOT_LEN],
    /// Oracle calls plus local candidate encryptions.
    pub op_count: usize,
    /// Matching candidates per window on the first probe input.
    pub candidates_per_window: Vec<usize>,
}

/// Recovers the contents of `target` through a writable neighbour.
///
/// The writable slot is filled with a known pattern. Window `k` (1..=16)
/// places the key so that `k` bytes come from the target: `k - 1` of them
/// are already recovered and one is unknown, so 256 local trial encryptions
/// against the device's reference output pin it down.
pub fn extract_protected_slot<O: EncryptOracle>(
    oracle: &mut O,
    writable: usize,
    target: usize,
) -> Result<Extraction, CcpError> {
    let known = [0u8; SLOT_LEN];
    let target_first = if writable + 1 == target {
        true
    } else if target + 1 == writable {
        false
    } else {
        return Err(CcpError::NotAdjacent { writable, target });
    };
    oracle.write_slot(writable, known)?;

    // `recovered` grows from the end of the target nearest the writable slot.
    let mut recovered: Vec<u8> = Vec::with_capacity(SLOT_LEN);
    let mut op_count = 0;
    let mut candidates_per_window = Vec::with_capacity(SLOT_LEN);

    for window in 1..=SLOT_LEN {
        let known_from_writable = SLOT_LEN - window;
        // Key layout for this window, with the unknown byte at `unknown_at`.
        let (key_addr, template, unknown_at) = if target_first {
            // writable | target: key = known[window..] | target[..window]
            let mut t = [0u8; SLOT_LEN];
            t[..known_from_writable].copy_from_slice(&known[window..]);
            t[known_from_writable..SLOT_LEN - 1].copy_from_slice(&recovered);
            (writable * SLOT_LEN + window, t, SLOT_LEN - 1)
        } else {
            // target | writable: key = target[16-window..] | known[..16-window]
            let mut t = [0u8; SLOT_LEN];
            for (i, b) in recovered.iter().rev().enumerate() {
                t[1 + i] = *b;
            }
            t[window..].copy_from_slice(&known[..known_from_writable]);
            (target * SLOT_LEN + SLOT_LEN - window, t, 0)
        };

        let mut candidates: Vec<u8> = (0..=255).collect();
        for (probe, input) in PROBE_INPUTS.iter().enumerate() {
            let input = Block128::new(*input);
            let reference = match oracle.encrypt(&AesJob { key_addr, input }) {
                Ok(out) => out,
                Err(CcpError::AlignmentViolation(_)) => {
                    return Err(CcpError::ExtractionImpossible(CcpErrorKind::UnalignedKeysRejected))
                }
                Err(e) => return Err(e),
            };
            op_count += 1;
            op_count += candidates.len();
            candidates.retain(|&guess| {
                let mut key = template;
                key[unknown_at] = guess;
                aes128_encrypt_block(&SymKey128::new(key), &input) == reference
            });
            if probe == 0 {
                candidates_per_window.push(candidates.len());
            }
            if candidates.len() <= 1 {
                break;
            }
        }
        match candidates.as_slice() {
            [byte] => recovered.push(*byte),
            _ => return Err(CcpError::ExtractionFailed { window }),
        }
    }

    let mut bytes = [0u8; SLOT_LEN];
    if target_first {
        bytes.copy_from_slice(&recovered);
    } else {
        for (i, b) in recovered.iter().enumerate() {
            bytes[SLOT_LEN - 1 - i] = *b;
        }
    }
    Ok(Extraction {
        bytes,
        op_count,
        candidates_per_window,
    })
}
