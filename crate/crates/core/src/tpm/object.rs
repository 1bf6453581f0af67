// SPDX-License-Identifier: Apache-2.0

//! Sealed objects: public area, private blob, sensitive area.
//!
//! The private blob is encrypt-then-MAC protected with two keys derived from
//! the parent's seed:
//!
//! ```text
//! hmac_key = KDFa(seed, "INTEGRITY", "", "", 256)
//! sym_key  = KDFa(seed, "STORAGE", name, "", 128)
//! ciphertext = AES-128-CFB(sym_key, iv, sensitive)
//! mac        = HMAC-SHA256(hmac_key, iv | ciphertext | name)
//! ```
//!
//! Nothing in the public area, including the authorization policy, takes
//! part in deciding whether the private blob can be opened. Whoever holds
//! the parent seed can unseal.

use super::{put_sized, Reader, TpmError};
use crate::crypto::{
    aes128_cfb, fixed_bytes, hmac_sha256_parts, hmac_sha256_verify, kdfa_tpm, sha256, CryptoError,
    Digest256, Direction, Iv128, MacKey256, SymKey128,
};

pub const TPM_ALG_SHA256: u16 = 0x000B;
pub const TPM_ALG_KEYEDHASH: u16 = 0x0008;
pub const TPM_ALG_NULL: u16 = 0x0010;
pub const INTEGRITY_LABEL: &str = "INTEGRITY";
pub const STORAGE_LABEL: &str = "STORAGE";
pub const SEED_LEN: usize = 32;
pub const NAME_LEN: usize = 2 + 32;

/// `fixedTPM | fixedParent | userWithAuth | noDA` as a sealed blob would
/// typically carry.
pub const DEFAULT_SEALED_ATTRIBUTES: u32 = 0x0000_0452;

fixed_bytes!(
    /// Persistent seed of a primary object; parent of the sealed objects.
    PrimarySeed,
    32
);
fixed_bytes!(
    /// `nameAlg || H(public area)`.
    ObjectName,
    34
);

impl From<CryptoError> for TpmError {
    fn from(e: CryptoError) -> Self {
        TpmError::FormatError(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectType {
    /// Keyed-hash object; with no sign/decrypt attributes this is a sealed
    /// data blob.
    KeyedHash,
}

impl ObjectType {
    fn alg_id(self) -> u16 {
        match self {
            ObjectType::KeyedHash => TPM_ALG_KEYEDHASH,
        }
    }
}

/// Public area of a sealed object. Marshals as a TPMT_PUBLIC for a
/// keyed-hash object with a NULL scheme.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TpmPublic {
    pub object_type: ObjectType,
    pub name_alg: u16,
    pub object_attributes: u32,
    pub auth_policy: Vec<u8>,
    pub public_unique: Vec<u8>,
}

impl TpmPublic {
    pub fn sealed_data(auth_policy: Vec<u8>, public_unique: Vec<u8>) -> Self {
        Self {
            object_type: ObjectType::KeyedHash,
            name_alg: TPM_ALG_SHA256,
            object_attributes: DEFAULT_SEALED_ATTRIBUTES,
            auth_policy,
            public_unique,
        }
    }

    /// Canonical TPMT_PUBLIC bytes, the input to the name hash.
    pub fn to_bytes(&self) -> Result<Vec<u8>, TpmError> {
        let mut out = Vec::with_capacity(16 + self.auth_policy.len() + self.public_unique.len());
        out.extend_from_slice(&self.object_type.alg_id().to_be_bytes());
        out.extend_from_slice(&self.name_alg.to_be_bytes());
        out.extend_from_slice(&self.object_attributes.to_be_bytes());
        put_sized(&mut out, &self.auth_policy)?;
        out.extend_from_slice(&TPM_ALG_NULL.to_be_bytes());
        put_sized(&mut out, &self.public_unique)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TpmError> {
        let mut r = Reader::new(bytes, "TPMT_PUBLIC");
        let public = Self::read(&mut r)?;
        r.finish()?;
        Ok(public)
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, TpmError> {
        let object_type = match r.u16()? {
            TPM_ALG_KEYEDHASH => ObjectType::KeyedHash,
            other => return Err(TpmError::Unsupported(format!("object type {other:#06x}"))),
        };
        let name_alg = r.u16()?;
        if name_alg != TPM_ALG_SHA256 {
            return Err(TpmError::Unsupported(format!("name algorithm {name_alg:#06x}")));
        }
        let object_attributes = r.u32()?;
        let auth_policy = r.sized()?.to_vec();
        let scheme = r.u16()?;
        if scheme != TPM_ALG_NULL {
            return Err(TpmError::Unsupported(format!("keyed-hash scheme {scheme:#06x}")));
        }
        let public_unique = r.sized()?.to_vec();
        Ok(Self {
            object_type,
            name_alg,
            object_attributes,
            auth_policy,
            public_unique,
        })
    }

    /// TPM2B_PUBLIC: 16-bit size, then the TPMT_PUBLIC bytes.
    pub fn marshal(&self) -> Result<Vec<u8>, TpmError> {
        let mut out = Vec::new();
        put_sized(&mut out, &self.to_bytes()?)?;
        Ok(out)
    }

    /// Reads a TPM2B_PUBLIC from the front of `bytes`; returns it with the
    /// number of bytes consumed.
    pub fn unmarshal(bytes: &[u8]) -> Result<(Self, usize), TpmError> {
        let mut r = Reader::new(bytes, "TPM2B_PUBLIC");
        let inner = r.sized()?;
        Ok((Self::from_bytes(inner)?, r.position()))
    }
}

/// Private blob: MAC, IV and CFB-encrypted sensitive area.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TpmPrivate {
    pub integrity_mac: Digest256,
    pub iv: Iv128,
    pub encrypted_sensitive: Vec<u8>,
}

impl TpmPrivate {
    /// `u16 mac length (32) | mac | iv | ciphertext`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 + 32 + 16 + self.encrypted_sensitive.len());
        out.extend_from_slice(&32u16.to_be_bytes());
        out.extend_from_slice(self.integrity_mac.as_bytes());
        out.extend_from_slice(self.iv.as_bytes());
        out.extend_from_slice(&self.encrypted_sensitive);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TpmError> {
        let mut r = Reader::new(bytes, "private area");
        let mac = r.sized()?;
        if mac.len() != 32 {
            return Err(TpmError::FormatError(format!("MAC of {} bytes, expected 32", mac.len())));
        }
        let iv = r.take(16)?;
        let encrypted_sensitive = bytes[r.position()..].to_vec();
        if encrypted_sensitive.is_empty() {
            return Err(TpmError::FormatError("empty encrypted sensitive area".into()));
        }
        Ok(Self {
            integrity_mac: Digest256::from_slice(mac)?,
            iv: Iv128::from_slice(iv)?,
            encrypted_sensitive,
        })
    }

    /// TPM2B_PRIVATE: 16-bit size, then [`Self::to_bytes`].
    pub fn marshal(&self) -> Result<Vec<u8>, TpmError> {
        let mut out = Vec::new();
        put_sized(&mut out, &self.to_bytes())?;
        Ok(out)
    }

    pub fn unmarshal(bytes: &[u8]) -> Result<(Self, usize), TpmError> {
        let mut r = Reader::new(bytes, "TPM2B_PRIVATE");
        let inner = r.sized()?;
        Ok((Self::from_bytes(inner)?, r.position()))
    }
}

/// Decrypted sensitive area.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TpmSensitive {
    pub auth_value: Vec<u8>,
    pub seed_value: [u8; SEED_LEN],
    pub sensitive_data: Vec<u8>,
}

impl TpmSensitive {
    /// Length-prefixed `auth_value | seed_value | sensitive_data`.
    pub fn to_bytes(&self) -> Result<Vec<u8>, TpmError> {
        let mut out = Vec::new();
        put_sized(&mut out, &self.auth_value)?;
        put_sized(&mut out, &self.seed_value)?;
        put_sized(&mut out, &self.sensitive_data)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TpmError> {
        let mut r = Reader::new(bytes, "sensitive area");
        let auth_value = r.sized()?.to_vec();
        let seed = r.sized()?;
        let seed_value: [u8; SEED_LEN] = seed.try_into().map_err(|_| {
            TpmError::FormatError(format!("seed value of {} bytes, expected {SEED_LEN}", seed.len()))
        })?;
        let sensitive_data = r.sized()?.to_vec();
        r.finish()?;
        Ok(Self {
            auth_value,
            seed_value,
            sensitive_data,
        })
    }
}

pub fn compute_name(public: &TpmPublic) -> Result<ObjectName, TpmError> {
    let mut name = [0u8; NAME_LEN];
    name[..2].copy_from_slice(&TPM_ALG_SHA256.to_be_bytes());
    name[2..].copy_from_slice(sha256(&public.to_bytes()?).as_bytes());
    Ok(ObjectName::new(name))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObjectKeys {
    pub hmac_key: MacKey256,
    pub sym_key: SymKey128,
}

/// The integrity key depends on the parent seed only.
pub fn integrity_key(parent_seed: &PrimarySeed) -> MacKey256 {
    let bytes = kdfa_tpm(parent_seed.as_bytes(), INTEGRITY_LABEL, b"", b"", 256).expect("fixed size");
    MacKey256::from_slice(&bytes).expect("32 bytes")
}

pub fn derive_object_keys(parent_seed: &PrimarySeed, name: &ObjectName) -> ObjectKeys {
    let sym = kdfa_tpm(parent_seed.as_bytes(), STORAGE_LABEL, name.as_bytes(), b"", 128).expect("fixed size");
    ObjectKeys {
        hmac_key: integrity_key(parent_seed),
        sym_key: SymKey128::from_slice(&sym).expect("16 bytes"),
    }
}

pub fn seal_object(
    sensitive: &TpmSensitive,
    public: &TpmPublic,
    parent_seed: &PrimarySeed,
    iv: &Iv128,
) -> Result<TpmPrivate, TpmError> {
    let name = compute_name(public)?;
    let keys = derive_object_keys(parent_seed, &name);
    let ciphertext = aes128_cfb(&keys.sym_key, iv, &sensitive.to_bytes()?, Direction::Encrypt);
    let mac = hmac_sha256_parts(
        keys.hmac_key.as_bytes(),
        &[iv.as_bytes(), &ciphertext, name.as_bytes()],
    )?;
    Ok(TpmPrivate {
        integrity_mac: mac,
        iv: *iv,
        encrypted_sensitive: ciphertext,
    })
}

fn mac_verifies(hmac_key: &MacKey256, private: &TpmPrivate, name: &ObjectName) -> bool {
    hmac_sha256_verify(
        hmac_key,
        &[private.iv.as_bytes(), &private.encrypted_sensitive, name.as_bytes()],
        &private.integrity_mac,
    )
}

/// Opens a sealed object with nothing but its parent seed. The MAC is
/// checked before any decryption; no policy or auth value is consulted.
pub fn unseal_object(
    public: &TpmPublic,
    private: &TpmPrivate,
    parent_seed: &PrimarySeed,
) -> Result<TpmSensitive, TpmError> {
    let name = compute_name(public)?;
    let keys = derive_object_keys(parent_seed, &name);
    if !mac_verifies(&keys.hmac_key, private, &name) {
        return Err(TpmError::WrongSeedOrTampered);
    }
    let plaintext = aes128_cfb(&keys.sym_key, &private.iv, &private.encrypted_sensitive, Direction::Decrypt);
    TpmSensitive::from_bytes(&plaintext)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedMatch {
    pub offset: usize,
    pub seed: PrimarySeed,
}

fn seed_windows<'a>(
    nv_plaintext: &'a [u8],
    public: &TpmPublic,
    private: &'a TpmPrivate,
) -> Result<impl Iterator<Item = SeedMatch> + 'a, TpmError> {
    let name = compute_name(public)?;
    Ok(nv_plaintext
        .windows(SEED_LEN)
        .enumerate()
        .filter_map(move |(offset, window)| {
            let seed = PrimarySeed::from_slice(window).expect("window is 32 bytes");
            mac_verifies(&integrity_key(&seed), private, &name).then_some(SeedMatch { offset, seed })
        }))
}

/// Slides a 32-byte window over `nv_plaintext` one byte at a time and
/// returns the lowest offset whose integrity key verifies `private`.
pub fn find_primary_seed(
    nv_plaintext: &[u8],
    public: &TpmPublic,
    private: &TpmPrivate,
) -> Result<SeedMatch, TpmError> {
    seed_windows(nv_plaintext, public, private)?
        .next()
        .ok_or(TpmError::NotFound)
}

/// Every verifying offset, lowest first.
pub fn find_all_primary_seeds(
    nv_plaintext: &[u8],
    public: &TpmPublic,
    private: &TpmPrivate,
) -> Result<Vec<SeedMatch>, TpmError> {
    Ok(seed_windows(nv_plaintext, public, private)?.collect())
}
