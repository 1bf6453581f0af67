// SPDX-License-Identifier: Apache-2.0

//! Deterministic cryptographic primitives and key-derivation functions.
//!
//! Everything here is a pure function over its inputs. The AES block
//! cipher, SHA-256 and HMAC come from the RustCrypto crates; the block
//! modes (CTR, CFB, CCM) and the counter-mode KDFs are composed on top of
//! them so that their exact framing is visible in one place.

use aes::cipher::{generic_array::GenericArray, BlockDecrypt, BlockEncrypt, KeyInit};
use aes::Aes128;
use hmac::{Hmac, Mac};
use sha2::{Digest, Sha256};
use thiserror::Error;

type HmacSha256 = Hmac<Sha256>;

/// AES block size in bytes.
pub const BLOCK_LEN: usize = 16;
/// Nonce length used for every CCM operation in this crate.
pub const CCM_NONCE_LEN: usize = 12;
/// CCM authentication tag length.
pub const CCM_TAG_LEN: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("invalid key: {0}")]
    InvalidKey(&'static str),
    #[error("invalid length: {0}")]
    InvalidLength(String),
    #[error("invalid nonce length {0}, expected {CCM_NONCE_LEN}")]
    InvalidNonce(usize),
    #[error("authentication failed")]
    AuthFailure,
}

/// Defines a fixed-length byte newtype with the usual conversions.
macro_rules! fixed_bytes {
    ($(#[$meta:meta])* $name:ident, $len:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash)]
        pub struct $name([u8; $len]);

        impl $name {
            pub const LEN: usize = $len;

            pub const fn new(bytes: [u8; $len]) -> Self {
                Self(bytes)
            }

            pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
                <[u8; $len]>::try_from(bytes).map(Self).map_err(|_| {
                    CryptoError::InvalidLength(format!(
                        "{} needs {} bytes, got {}",
                        stringify!($name),
                        $len,
                        bytes.len()
                    ))
                })
            }

            pub fn from_hex(text: &str) -> Result<Self, CryptoError> {
                let bytes = hex::decode(text).map_err(|e| {
                    CryptoError::InvalidLength(format!("{}: {e}", stringify!($name)))
                })?;
                Self::from_slice(&bytes)
            }

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }
        }

        impl From<[u8; $len]> for $name {
            fn from(bytes: [u8; $len]) -> Self {
                Self(bytes)
            }
        }

        impl AsRef<[u8]> for $name {
            fn as_ref(&self) -> &[u8] {
                &self.0
            }
        }

        impl std::fmt::Debug for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                write!(f, "{}({})", stringify!($name), hex::encode(self.0))
            }
        }
    };
}

pub(crate) use fixed_bytes;

fixed_bytes!(
    /// 128-bit AES key.
    SymKey128,
    16
);
fixed_bytes!(
    /// 256-bit HMAC-SHA256 key.
    MacKey256,
    32
);
fixed_bytes!(
    /// SHA-256 or HMAC-SHA256 output.
    Digest256,
    32
);
fixed_bytes!(
    /// Initial counter block / IV for the AES modes.
    Iv128,
    16
);
fixed_bytes!(
    /// One AES block.
    Block128,
    16
);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Encrypt,
    Decrypt,
}

pub fn sha256(message: &[u8]) -> Digest256 {
    Digest256(Sha256::digest(message).into())
}

/// HMAC-SHA256 over `message`. Empty keys are rejected.
pub fn hmac_sha256(key: &[u8], message: &[u8]) -> Result<Digest256, CryptoError> {
    hmac_sha256_parts(key, &[message])
}

/// HMAC-SHA256 over the concatenation of `parts`.
pub fn hmac_sha256_parts(key: &[u8], parts: &[&[u8]]) -> Result<Digest256, CryptoError> {
    if key.is_empty() {
        return Err(CryptoError::InvalidKey("HMAC key must not be empty"));
    }
    let mut mac = <HmacSha256 as Mac>::new_from_slice(key).expect("HMAC accepts any key length");
    for part in parts {
        mac.update(part);
    }
    Ok(Digest256(mac.finalize().into_bytes().into()))
}

/// Constant-time check of an HMAC-SHA256 tag over the concatenation of `parts`.
pub fn hmac_sha256_verify(key: &MacKey256, parts: &[&[u8]], expected: &Digest256) -> bool {
    let mut mac = <HmacSha256 as Mac>::new_from_slice(key.as_bytes()).expect("32-byte key");
    for part in parts {
        mac.update(part);
    }
    mac.verify_slice(expected.as_bytes()).is_ok()
}

fn aes(key: &SymKey128) -> Aes128 {
    Aes128::new(GenericArray::from_slice(key.as_bytes()))
}

pub fn aes128_encrypt_block(key: &SymKey128, block: &Block128) -> Block128 {
    let mut buf = GenericArray::clone_from_slice(block.as_bytes());
    aes(key).encrypt_block(&mut buf);
    Block128(buf.into())
}

pub fn aes128_decrypt_block(key: &SymKey128, block: &Block128) -> Block128 {
    let mut buf = GenericArray::clone_from_slice(block.as_bytes());
    aes(key).decrypt_block(&mut buf);
    Block128(buf.into())
}

fn encrypt_raw(cipher: &Aes128, block: &[u8; BLOCK_LEN]) -> [u8; BLOCK_LEN] {
    let mut buf = GenericArray::clone_from_slice(block);
    cipher.encrypt_block(&mut buf);
    buf.into()
}

fn xor_into(dst: &mut [u8], keystream: &[u8]) {
    for (d, k) in dst.iter_mut().zip(keystream) {
        *d ^= k;
    }
}

/// Increments the final 32 bits of a counter block, big-endian, wrapping.
fn increment_counter32(counter: &mut [u8; BLOCK_LEN]) {
    let tail = u32::from_be_bytes(counter[12..].try_into().unwrap()).wrapping_add(1);
    counter[12..].copy_from_slice(&tail.to_be_bytes());
}

/// AES-128 in counter mode. Encryption and decryption are the same operation.
pub fn aes128_ctr(key: &SymKey128, iv: &Iv128, data: &[u8]) -> Vec<u8> {
    let cipher = aes(key);
    let mut counter = *iv.as_bytes();
    let mut out = data.to_vec();
    for chunk in out.chunks_mut(BLOCK_LEN) {
        xor_into(chunk, &encrypt_raw(&cipher, &counter));
        increment_counter32(&mut counter);
    }
    out
}

/// AES-128 in full-block CFB mode; a short final block is allowed.
pub fn aes128_cfb(key: &SymKey128, iv: &Iv128, data: &[u8], direction: Direction) -> Vec<u8> {
    let cipher = aes(key);
    let mut feedback = *iv.as_bytes();
    let mut out = data.to_vec();
    for chunk in out.chunks_mut(BLOCK_LEN) {
        let keystream = encrypt_raw(&cipher, &feedback);
        let incoming = <[u8; BLOCK_LEN]>::try_from(&*chunk).ok();
        xor_into(chunk, &keystream);
        let next = match direction {
            Direction::Encrypt => <[u8; BLOCK_LEN]>::try_from(&*chunk).ok(),
            Direction::Decrypt => incoming,
        };
        // A short block can only be the last one.
        match next {
            Some(block) => feedback = block,
            None => break,
        }
    }
    out
}

fn check_bits(bits: u32) -> Result<usize, CryptoError> {
    if bits == 0 || !bits.is_multiple_of(8) {
        return Err(CryptoError::InvalidLength(format!(
            "KDF output of {bits} bits is not a positive whole number of bytes"
        )));
    }
    Ok(bits as usize / 8)
}

/// Counter-mode KDF with HMAC-SHA256 as PRF: each iteration MACs
/// `i || fixed_input || L`, both 32-bit big-endian.
fn counter_kdf(key: &[u8], fixed_input: &[&[u8]], bits: u32) -> Result<Vec<u8>, CryptoError> {
    let out_len = check_bits(bits)?;
    let length = bits.to_be_bytes();
    let mut out = Vec::with_capacity(out_len + 32);
    let mut counter: u32 = 1;
    while out.len() < out_len {
        let counter_bytes = counter.to_be_bytes();
        let mut parts: Vec<&[u8]> = Vec::with_capacity(fixed_input.len() + 2);
        parts.push(&counter_bytes);
        parts.extend_from_slice(fixed_input);
        parts.push(&length);
        out.extend_from_slice(hmac_sha256_parts(key, &parts)?.as_bytes());
        counter += 1;
    }
    out.truncate(out_len);
    Ok(out)
}

/// NIST SP 800-108 KDF in counter mode with HMAC-SHA256:
/// fixed input is `label || 0x00 || context`.
pub fn kdf_ctr_sp800_108(
    key: &[u8],
    label: &[u8],
    context: &[u8],
    bits: u32,
) -> Result<Vec<u8>, CryptoError> {
    counter_kdf(key, &[label, &[0u8], context], bits)
}

/// TPM 2.0 KDFa (SHA-256 profile): fixed input is
/// `label || 0x00 || context_u || context_v`.
pub fn kdfa_tpm(
    seed: &[u8],
    label: &str,
    context_u: &[u8],
    context_v: &[u8],
    bits: u32,
) -> Result<Vec<u8>, CryptoError> {
    counter_kdf(seed, &[label.as_bytes(), &[0u8], context_u, context_v], bits)
}

/// AES-128-CCM with a 12-byte nonce and 16-byte tag. Encryption returns
/// `ciphertext || tag`; decryption verifies the tag before returning plaintext.
pub fn aes_ccm(
    key: &SymKey128,
    nonce: &[u8],
    aad: &[u8],
    data: &[u8],
    direction: Direction,
) -> Result<Vec<u8>, CryptoError> {
    if nonce.len() != CCM_NONCE_LEN {
        return Err(CryptoError::InvalidNonce(nonce.len()));
    }
    match direction {
        Direction::Encrypt => ccm_seal(key, nonce, aad, data, CCM_TAG_LEN),
        Direction::Decrypt => ccm_open(key, nonce, aad, data, CCM_TAG_LEN),
    }
}

/// CBC-MAC over the CCM-formatted `B_0 || encoded aad || payload`.
fn ccm_cbc_mac(cipher: &Aes128, nonce: &[u8], aad: &[u8], payload: &[u8], tag_len: usize) -> [u8; 16] {
    let length_octets = 15 - nonce.len();
    let mut b0 = [0u8; BLOCK_LEN];
    b0[0] = (u8::from(!aad.is_empty()) << 6)
        | ((((tag_len - 2) / 2) as u8) << 3)
        | (length_octets as u8 - 1);
    b0[1..1 + nonce.len()].copy_from_slice(nonce);
    let len_bytes = (payload.len() as u64).to_be_bytes();
    b0[1 + nonce.len()..].copy_from_slice(&len_bytes[8 - length_octets..]);

    let mut state = encrypt_raw(cipher, &b0);
    let absorb = |bytes: &[u8], state: &mut [u8; 16]| {
        for chunk in bytes.chunks(BLOCK_LEN) {
            xor_into(state, chunk);
            *state = encrypt_raw(cipher, state);
        }
    };
    if !aad.is_empty() {
        let mut encoded = Vec::with_capacity(aad.len() + 6);
        if aad.len() < 0xFF00 {
            encoded.extend_from_slice(&(aad.len() as u16).to_be_bytes());
        } else {
            encoded.extend_from_slice(&[0xFF, 0xFE]);
            encoded.extend_from_slice(&(aad.len() as u32).to_be_bytes());
        }
        encoded.extend_from_slice(aad);
        absorb(&encoded, &mut state);
    }
    absorb(payload, &mut state);
    state
}

fn ccm_counter_block(nonce: &[u8], index: u64) -> [u8; 16] {
    let length_octets = 15 - nonce.len();
    let mut block = [0u8; BLOCK_LEN];
    block[0] = length_octets as u8 - 1;
    block[1..1 + nonce.len()].copy_from_slice(nonce);
    let idx = index.to_be_bytes();
    block[1 + nonce.len()..].copy_from_slice(&idx[8 - length_octets..]);
    block
}

fn ccm_ctr(cipher: &Aes128, nonce: &[u8], data: &mut [u8]) {
    for (i, chunk) in data.chunks_mut(BLOCK_LEN).enumerate() {
        xor_into(chunk, &encrypt_raw(cipher, &ccm_counter_block(nonce, i as u64 + 1)));
    }
}

fn ccm_check_len(nonce: &[u8], len: usize) -> Result<(), CryptoError> {
    let length_octets = 15 - nonce.len();
    if length_octets < 8 && (len as u64) >> (8 * length_octets) != 0 {
        return Err(CryptoError::InvalidLength(format!(
            "CCM payload of {len} bytes too long for a {}-byte nonce",
            nonce.len()
        )));
    }
    Ok(())
}

pub(crate) fn ccm_seal(
    key: &SymKey128,
    nonce: &[u8],
    aad: &[u8],
    plaintext: &[u8],
    tag_len: usize,
) -> Result<Vec<u8>, CryptoError> {
    ccm_check_len(nonce, plaintext.len())?;
    let cipher = aes(key);
    let tag = ccm_cbc_mac(&cipher, nonce, aad, plaintext, tag_len);
    let s0 = encrypt_raw(&cipher, &ccm_counter_block(nonce, 0));
    let mut out = plaintext.to_vec();
    ccm_ctr(&cipher, nonce, &mut out);
    out.extend(tag[..tag_len].iter().zip(&s0).map(|(t, s)| t ^ s));
    Ok(out)
}

pub(crate) fn ccm_open(
    key: &SymKey128,
    nonce: &[u8],
    aad: &[u8],
    sealed: &[u8],
    tag_len: usize,
) -> Result<Vec<u8>, CryptoError> {
    let body_len = sealed.len().checked_sub(tag_len).ok_or(CryptoError::AuthFailure)?;
    ccm_check_len(nonce, body_len)?;
    let cipher = aes(key);
    let (body, received_tag) = sealed.split_at(body_len);
    let mut plaintext = body.to_vec();
    ccm_ctr(&cipher, nonce, &mut plaintext);
    let tag = ccm_cbc_mac(&cipher, nonce, aad, &plaintext, tag_len);
    let s0 = encrypt_raw(&cipher, &ccm_counter_block(nonce, 0));
    let diff = tag[..tag_len]
        .iter()
        .zip(&s0)
        .zip(received_tag)
        .fold(0u8, |acc, ((t, s), r)| acc | (t ^ s ^ r));
    if diff != 0 {
        return Err(CryptoError::AuthFailure);
    }
    Ok(plaintext)
}
