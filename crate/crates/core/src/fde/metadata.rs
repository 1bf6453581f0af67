// SPDX-License-Identifier: Apache-2.0

//! Volume-metadata container and datum payloads.
//!
//! Container, little-endian:
//!
//! ```text
//! "FVMD" | version u16 = 1 | count u16 | count x (datum_type u16 | payload_len u32 | payload)
//! ```
//!
//! A TPM-encoded datum payload is `TPM2B_PRIVATE | TPM2B_PUBLIC | u16 size |
//! PCR policy`, with the TPM structures in their usual big-endian form.

use super::FdeError;
use crate::crypto::CCM_NONCE_LEN;
use crate::crypto::CCM_TAG_LEN;
use crate::tpm::{PcrPolicy, TpmPrivate, TpmPublic};

pub const METADATA_MAGIC: [u8; 4] = *b"FVMD";
pub const METADATA_VERSION: u16 = 1;
const DATUM_HEADER_LEN: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DatumType {
    TpmEncoded,
    Stretch,
    AesCcmBlob,
    SealedSecret,
    Inner,
}

impl DatumType {
    pub fn code(self) -> u16 {
        match self {
            DatumType::TpmEncoded => 1,
            DatumType::Stretch => 2,
            DatumType::AesCcmBlob => 3,
            DatumType::SealedSecret => 4,
            DatumType::Inner => 5,
        }
    }

    pub fn from_code(code: u16) -> Result<Self, FdeError> {
        Ok(match code {
            1 => DatumType::TpmEncoded,
            2 => DatumType::Stretch,
            3 => DatumType::AesCcmBlob,
            4 => DatumType::SealedSecret,
            5 => DatumType::Inner,
            other => return Err(FdeError::FormatError(format!("unknown datum type {other}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Datum {
    pub datum_type: DatumType,
    pub payload: Vec<u8>,
}

impl Datum {
    pub fn new(datum_type: DatumType, payload: Vec<u8>) -> Self {
        Self { datum_type, payload }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(DATUM_HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.datum_type.code().to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Reads one datum from the front of `raw`, returning it and the bytes consumed.
    pub fn parse_prefix(raw: &[u8]) -> Result<(Self, usize), FdeError> {
        if raw.len() < DATUM_HEADER_LEN {
            return Err(FdeError::FormatError("truncated datum header".into()));
        }
        let datum_type = DatumType::from_code(u16::from_le_bytes([raw[0], raw[1]]))?;
        let len = u32::from_le_bytes(raw[2..6].try_into().unwrap()) as usize;
        let end = DATUM_HEADER_LEN
            .checked_add(len)
            .filter(|&end| end <= raw.len())
            .ok_or_else(|| FdeError::FormatError(format!("datum payload of {len} bytes is truncated")))?;
        Ok((Self::new(datum_type, raw[DATUM_HEADER_LEN..end].to_vec()), end))
    }

    /// A datum that must span `raw` exactly.
    pub fn parse(raw: &[u8]) -> Result<Self, FdeError> {
        let (datum, used) = Self::parse_prefix(raw)?;
        if used != raw.len() {
            return Err(FdeError::FormatError(format!("{} bytes after datum", raw.len() - used)));
        }
        Ok(datum)
    }

    fn validate(&self) -> Result<(), FdeError> {
        match self.datum_type {
            DatumType::TpmEncoded | DatumType::SealedSecret => {
                TpmEncodedParts::from_bytes(&self.payload).map(drop)
            }
            DatumType::Stretch => super::StretchParams::from_bytes(&self.payload).map(drop),
            DatumType::AesCcmBlob => CcmBlob::from_bytes(&self.payload).map(drop),
            DatumType::Inner => Ok(()),
        }
    }
}

/// The datums of one protector, at most one of each type.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VolumeMetadata {
    datums: Vec<Datum>,
}

impl VolumeMetadata {
    pub fn new(datums: Vec<Datum>) -> Result<Self, FdeError> {
        for (i, datum) in datums.iter().enumerate() {
            if datums[..i].iter().any(|d| d.datum_type == datum.datum_type) {
                return Err(FdeError::FormatError(format!(
                    "duplicate {:?} datum",
                    datum.datum_type
                )));
            }
            datum.validate()?;
        }
        Ok(Self { datums })
    }

    pub fn datums(&self) -> &[Datum] {
        &self.datums
    }

    pub fn get(&self, datum_type: DatumType) -> Option<&Datum> {
        self.datums.iter().find(|d| d.datum_type == datum_type)
    }

    pub fn require(&self, datum_type: DatumType) -> Result<&Datum, FdeError> {
        self.get(datum_type).ok_or(FdeError::MissingDatum(datum_type))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&METADATA_MAGIC);
        out.extend_from_slice(&METADATA_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.datums.len() as u16).to_le_bytes());
        for datum in &self.datums {
            out.extend_from_slice(&datum.to_bytes());
        }
        out
    }
}

pub fn parse_volume_metadata(raw: &[u8]) -> Result<VolumeMetadata, FdeError> {
    if raw.len() < 8 || raw[..4] != METADATA_MAGIC {
        return Err(FdeError::FormatError("bad volume metadata magic".into()));
    }
    let version = u16::from_le_bytes([raw[4], raw[5]]);
    if version != METADATA_VERSION {
        return Err(FdeError::FormatError(format!("unsupported metadata version {version}")));
    }
    let count = u16::from_le_bytes([raw[6], raw[7]]);
    let mut at = 8;
    let mut datums = Vec::with_capacity(usize::from(count));
    for _ in 0..count {
        let (datum, used) = Datum::parse_prefix(&raw[at..])?;
        datums.push(datum);
        at += used;
    }
    if at != raw.len() {
        return Err(FdeError::FormatError(format!("{} trailing bytes", raw.len() - at)));
    }
    VolumeMetadata::new(datums)
}

/// A sealed object together with the PCR policy it was bound to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TpmEncodedParts {
    pub private: TpmPrivate,
    pub public: TpmPublic,
    pub pcr_policy: PcrPolicy,
}

impl TpmEncodedParts {
    pub fn to_bytes(&self) -> Result<Vec<u8>, FdeError> {
        let mut out = self.private.marshal()?;
        out.extend_from_slice(&self.public.marshal()?);
        let policy = self.pcr_policy.to_bytes();
        out.extend_from_slice(&(policy.len() as u16).to_be_bytes());
        out.extend_from_slice(&policy);
        Ok(out)
    }

    pub fn from_bytes(payload: &[u8]) -> Result<Self, FdeError> {
        let (private, used_private) = TpmPrivate::unmarshal(payload)?;
        let rest = &payload[used_private..];
        let (public, used_public) = TpmPublic::unmarshal(rest)?;
        let rest = &rest[used_public..];
        if rest.len() < 2 {
            return Err(FdeError::FormatError("missing PCR policy section".into()));
        }
        let policy_len = usize::from(u16::from_be_bytes([rest[0], rest[1]]));
        if policy_len == 0 {
            return Err(FdeError::FormatError("empty PCR policy section".into()));
        }
        if rest.len() != 2 + policy_len {
            return Err(FdeError::FormatError(format!(
                "PCR policy section declares {policy_len} bytes, {} present",
                rest.len() - 2
            )));
        }
        Ok(Self {
            private,
            public,
            pcr_policy: PcrPolicy::from_bytes(&rest[2..])?,
        })
    }
}

pub fn split_tpm_encoded_datum(datum: &Datum) -> Result<TpmEncodedParts, FdeError> {
    match datum.datum_type {
        DatumType::TpmEncoded | DatumType::SealedSecret => TpmEncodedParts::from_bytes(&datum.payload),
        other => Err(FdeError::FormatError(format!("{other:?} datum is not TPM-encoded"))),
    }
}

/// Payload of an AES-CCM datum: `nonce[12] | ciphertext | tag[16]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CcmBlob {
    pub nonce: [u8; CCM_NONCE_LEN],
    pub sealed: Vec<u8>,
}

impl CcmBlob {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.nonce.to_vec();
        out.extend_from_slice(&self.sealed);
        out
    }

    pub fn from_bytes(payload: &[u8]) -> Result<Self, FdeError> {
        if payload.len() < CCM_NONCE_LEN + CCM_TAG_LEN {
            return Err(FdeError::FormatError(format!(
                "AES-CCM datum of {} bytes is too short",
                payload.len()
            )));
        }
        Ok(Self {
            nonce: payload[..CCM_NONCE_LEN].try_into().unwrap(),
            sealed: payload[CCM_NONCE_LEN..].to_vec(),
        })
    }
}
