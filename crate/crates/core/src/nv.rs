// SPDX-License-Identifier: Apache-2.0

//! The fTPM non-volatile storage image.
//!
//! An image is two 64 KiB append-only sections. The section with the higher
//! sequence number is the live one. Layout, little-endian throughout:
//!
//! ```text
//! section header (16): "FTNV" | version u16 = 1 | section_sequence u32 | 6 x 0x00
//! entry header   (72): magic u16 = 0x4E56 | context u16 | sequence u32
//!                      | field_lengths 7 x u16 | pad u16 = 0 | iv[16] | mac[32]
//! entry body         : sum(field_lengths) bytes, then 0x00 up to 4-byte alignment
//! ```
//!
//! A magic of `0xFFFF` (erased flash) ends the entry list. Data entry bodies
//! are AES-128-CTR encrypted; every entry carries an HMAC-SHA256 over
//! `iv | field-length table | body`. Context 0 is reserved for section MACs:
//! a single clear 32-byte field holding the HMAC of the section bytes from
//! the section start up to that entry.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::crypto::{aes128_ctr, hmac_sha256_parts, hmac_sha256_verify, Digest256, Iv128, MacKey256};
use crate::keys::NvKeys;

pub const IMAGE_LEN: usize = 2 * SECTION_LEN;
pub const SECTION_LEN: usize = 65_536;
pub const SECTION_HEADER_LEN: usize = 16;
pub const ENTRY_HEADER_LEN: usize = 72;
pub const SECTION_MAGIC: [u8; 4] = *b"FTNV";
pub const FORMAT_VERSION: u16 = 1;
pub const ENTRY_MAGIC: u16 = 0x4E56;
pub const ERASED_MAGIC: u16 = 0xFFFF;
pub const MAX_FIELDS: usize = 7;
/// Largest body that fits in an otherwise empty section.
pub const MAX_BODY_LEN: usize = SECTION_LEN - SECTION_HEADER_LEN - ENTRY_HEADER_LEN;
pub const SECTION_MAC_CONTEXT: u16 = 0;
/// The encoder appends a section MAC after this many data entries.
pub const SECTION_MAC_CADENCE: usize = 8;

const IV_LABEL: &[u8] = b"nv entry iv";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NvError {
    #[error("image is {actual} bytes, expected {IMAGE_LEN}")]
    SizeMismatch { actual: usize },
    #[error("format error: {0}")]
    FormatError(String),
    #[error("entry at section {section} offset {offset:#x} runs past the section end")]
    TruncatedEntry { section: usize, offset: usize },
    #[error("both sections carry sequence {0}")]
    AmbiguousSections(u32),
    #[error("MAC check failed for context {context} sequence {sequence}")]
    IntegrityError { context: u16, sequence: u32 },
    #[error("capacity exceeded: {0}")]
    CapacityError(String),
}

/// One parsed (still encrypted) entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NvEntry {
    /// Byte offset of the entry header within its section.
    pub offset: usize,
    pub context: u16,
    pub sequence: u32,
    pub field_lengths: [u16; MAX_FIELDS],
    pub iv: Iv128,
    pub mac: Digest256,
    pub ciphertext: Vec<u8>,
}

impl NvEntry {
    pub fn body_len(&self) -> usize {
        self.field_lengths.iter().map(|&l| usize::from(l)).sum()
    }

    fn length_table(&self) -> [u8; 2 * MAX_FIELDS] {
        length_table_bytes(&self.field_lengths)
    }

    /// Bytes the entry occupies in the section, padding included.
    pub fn encoded_len(&self) -> usize {
        align4(ENTRY_HEADER_LEN + self.body_len())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NvSection {
    /// Physical position in the image (0 or 1).
    pub index: usize,
    pub sequence: u32,
    pub entries: Vec<NvEntry>,
    raw: Vec<u8>,
}

impl NvSection {
    pub fn raw(&self) -> &[u8] {
        &self.raw
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NvImage {
    pub sections: [NvSection; 2],
}

/// A verified, decrypted entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecryptedEntry {
    pub context: u16,
    pub sequence: u32,
    /// Fields up to the last non-empty slot of the length table.
    pub fields: Vec<Vec<u8>>,
}

/// Plaintext entry as handed to the encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlainEntry {
    pub context: u16,
    pub sequence: u32,
    pub fields: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectionContents {
    pub sequence: u32,
    pub entries: Vec<PlainEntry>,
}

impl SectionContents {
    pub fn empty(sequence: u32) -> Self {
        Self {
            sequence,
            entries: Vec::new(),
        }
    }
}

/// One record of the decrypted state. Unverified entries carry no fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateRecord {
    pub sequence: u32,
    pub fields: Vec<Vec<u8>>,
    pub verified: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectionMacStatus {
    pub sequence: u32,
    pub offset: usize,
    pub verified: bool,
}

/// Decrypted view of the active section.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NvState {
    pub active_section: u32,
    pub contexts: BTreeMap<u16, Vec<StateRecord>>,
    pub section_macs: Vec<SectionMacStatus>,
}

impl NvState {
    pub fn entry_count(&self) -> usize {
        self.contexts.values().map(Vec::len).sum()
    }

    pub fn failed_entries(&self) -> usize {
        self.contexts
            .values()
            .flatten()
            .filter(|r| !r.verified)
            .count()
    }

    /// Concatenation of every verified field, contexts ascending, entries
    /// in sequence order. This is the buffer searched for primary seeds.
    pub fn plaintext(&self) -> Vec<u8> {
        self.contexts
            .values()
            .flatten()
            .filter(|r| r.verified)
            .flat_map(|r| r.fields.iter().flatten().copied())
            .collect()
    }
}

fn align4(n: usize) -> usize {
    (n + 3) & !3
}

fn length_table_bytes(lengths: &[u16; MAX_FIELDS]) -> [u8; 2 * MAX_FIELDS] {
    let mut out = [0u8; 2 * MAX_FIELDS];
    for (chunk, len) in out.chunks_exact_mut(2).zip(lengths) {
        chunk.copy_from_slice(&len.to_le_bytes());
    }
    out
}

fn u16_at(buf: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([buf[at], buf[at + 1]])
}

fn u32_at(buf: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(buf[at..at + 4].try_into().unwrap())
}

pub fn parse_image(raw: &[u8]) -> Result<NvImage, NvError> {
    if raw.len() != IMAGE_LEN {
        return Err(NvError::SizeMismatch { actual: raw.len() });
    }
    let first = parse_section(0, &raw[..SECTION_LEN])?;
    let second = parse_section(1, &raw[SECTION_LEN..])?;
    Ok(NvImage {
        sections: [first, second],
    })
}

fn parse_section(index: usize, raw: &[u8]) -> Result<NvSection, NvError> {
    if raw[..4] != SECTION_MAGIC {
        return Err(NvError::FormatError(format!("section {index}: bad magic")));
    }
    let version = u16_at(raw, 4);
    if version != FORMAT_VERSION {
        return Err(NvError::FormatError(format!(
            "section {index}: unsupported version {version}"
        )));
    }
    let sequence = u32_at(raw, 6);

    let mut entries = Vec::new();
    let mut offset = SECTION_HEADER_LEN;
    while offset + 2 <= SECTION_LEN {
        let magic = u16_at(raw, offset);
        if magic == ERASED_MAGIC {
            break;
        }
        if magic != ENTRY_MAGIC {
            return Err(NvError::FormatError(format!(
                "section {index}: bad entry magic {magic:#06x} at {offset:#x}"
            )));
        }
        if offset + ENTRY_HEADER_LEN > SECTION_LEN {
            return Err(NvError::TruncatedEntry { section: index, offset });
        }
        let header = &raw[offset..offset + ENTRY_HEADER_LEN];
        let mut field_lengths = [0u16; MAX_FIELDS];
        for (i, len) in field_lengths.iter_mut().enumerate() {
            *len = u16_at(header, 8 + 2 * i);
        }
        if u16_at(header, 22) != 0 {
            return Err(NvError::FormatError(format!(
                "section {index}: non-zero header pad at {offset:#x}"
            )));
        }
        let body_len: usize = field_lengths.iter().map(|&l| usize::from(l)).sum();
        let body_start = offset + ENTRY_HEADER_LEN;
        if body_start + body_len > SECTION_LEN {
            return Err(NvError::TruncatedEntry { section: index, offset });
        }
        let entry = NvEntry {
            offset,
            context: u16_at(header, 2),
            sequence: u32_at(header, 4),
            field_lengths,
            iv: Iv128::from_slice(&header[24..40]).expect("16 bytes"),
            mac: Digest256::from_slice(&header[40..72]).expect("32 bytes"),
            ciphertext: raw[body_start..body_start + body_len].to_vec(),
        };
        offset += entry.encoded_len();
        entries.push(entry);
    }

    Ok(NvSection {
        index,
        sequence,
        entries,
        raw: raw.to_vec(),
    })
}

/// The newer of the two sections, which holds the complete live state.
pub fn select_active_section(image: &NvImage) -> Result<&NvSection, NvError> {
    let [a, b] = &image.sections;
    match a.sequence.cmp(&b.sequence) {
        std::cmp::Ordering::Greater => Ok(a),
        std::cmp::Ordering::Less => Ok(b),
        std::cmp::Ordering::Equal => Err(NvError::AmbiguousSections(a.sequence)),
    }
}

pub fn verify_entry(entry: &NvEntry, integrity: &MacKey256) -> bool {
    hmac_sha256_verify(
        integrity,
        &[entry.iv.as_bytes(), &entry.length_table(), &entry.ciphertext],
        &entry.mac,
    )
}

/// Checks every section-MAC entry against the section bytes preceding it.
/// Vacuously true for a section without section MACs.
pub fn verify_section_macs(section: &NvSection, integrity: &MacKey256) -> Result<bool, NvError> {
    Ok(section_mac_report(section, integrity)?
        .iter()
        .all(|status| status.verified))
}

pub fn section_mac_report(
    section: &NvSection,
    integrity: &MacKey256,
) -> Result<Vec<SectionMacStatus>, NvError> {
    section
        .entries
        .iter()
        .filter(|e| e.context == SECTION_MAC_CONTEXT)
        .map(|entry| {
            let mut expected_lengths = [0u16; MAX_FIELDS];
            expected_lengths[0] = 32;
            if entry.field_lengths != expected_lengths {
                return Err(NvError::FormatError(format!(
                    "section MAC entry at {:#x} must hold exactly one 32-byte field",
                    entry.offset
                )));
            }
            let stored = Digest256::from_slice(&entry.ciphertext).expect("checked length");
            let verified = verify_entry(entry, integrity)
                && hmac_sha256_verify(integrity, &[&section.raw[..entry.offset]], &stored);
            Ok(SectionMacStatus {
                sequence: entry.sequence,
                offset: entry.offset,
                verified,
            })
        })
        .collect()
}

/// Verifies the entry MAC, then decrypts and splits the body. Entries that
/// fail verification are never decrypted.
pub fn decrypt_entry(entry: &NvEntry, keys: &NvKeys) -> Result<DecryptedEntry, NvError> {
    if !verify_entry(entry, &keys.integrity) {
        return Err(NvError::IntegrityError {
            context: entry.context,
            sequence: entry.sequence,
        });
    }
    let body = aes128_ctr(&keys.storage, &entry.iv, &entry.ciphertext);
    let used = entry
        .field_lengths
        .iter()
        .rposition(|&l| l != 0)
        .map_or(0, |last| last + 1);
    let mut fields = Vec::with_capacity(used);
    let mut at = 0;
    for &len in &entry.field_lengths[..used] {
        let len = usize::from(len);
        fields.push(body[at..at + len].to_vec());
        at += len;
    }
    Ok(DecryptedEntry {
        context: entry.context,
        sequence: entry.sequence,
        fields,
    })
}

/// Decrypts the active section. MAC failures are recorded per entry and do
/// not stop the remaining entries from being decrypted.
pub fn decrypt_image(image: &NvImage, keys: &NvKeys) -> Result<NvState, NvError> {
    let section = select_active_section(image)?;
    let mut contexts: BTreeMap<u16, Vec<StateRecord>> = BTreeMap::new();
    for entry in section.entries.iter().filter(|e| e.context != SECTION_MAC_CONTEXT) {
        let record = match decrypt_entry(entry, keys) {
            Ok(decrypted) => StateRecord {
                sequence: entry.sequence,
                fields: decrypted.fields,
                verified: true,
            },
            Err(_) => StateRecord {
                sequence: entry.sequence,
                fields: Vec::new(),
                verified: false,
            },
        };
        contexts.entry(entry.context).or_default().push(record);
    }
    for records in contexts.values_mut() {
        records.sort_by_key(|r| r.sequence);
    }
    let section_macs = section_mac_report(section, &keys.integrity).unwrap_or_else(|_| {
        section
            .entries
            .iter()
            .filter(|e| e.context == SECTION_MAC_CONTEXT)
            .map(|e| SectionMacStatus {
                sequence: e.sequence,
                offset: e.offset,
                verified: false,
            })
            .collect()
    });
    Ok(NvState {
        active_section: section.sequence,
        contexts,
        section_macs,
    })
}

/// Contexts whose entries are not in strictly increasing sequence order.
pub fn non_monotonic_contexts(section: &NvSection) -> Vec<u16> {
    let mut last: BTreeMap<u16, u32> = BTreeMap::new();
    let mut flagged = Vec::new();
    for entry in &section.entries {
        if let Some(prev) = last.insert(entry.context, entry.sequence) {
            if entry.sequence <= prev && !flagged.contains(&entry.context) {
                flagged.push(entry.context);
            }
        }
    }
    flagged.sort_unstable();
    flagged
}

/// Builds a 131 072-byte image. `sections[0]` and `sections[1]` land at the
/// first and second physical positions respectively.
pub fn encode_image(sections: &[SectionContents; 2], keys: &NvKeys) -> Result<Vec<u8>, NvError> {
    let mut out = Vec::with_capacity(IMAGE_LEN);
    for contents in sections {
        out.extend_from_slice(&encode_section(contents, keys)?);
    }
    Ok(out)
}

fn encode_section(contents: &SectionContents, keys: &NvKeys) -> Result<Vec<u8>, NvError> {
    let mut buf = vec![0xFFu8; SECTION_LEN];
    buf[..4].copy_from_slice(&SECTION_MAGIC);
    buf[4..6].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf[6..10].copy_from_slice(&contents.sequence.to_le_bytes());
    buf[10..16].fill(0);

    let mut offset = SECTION_HEADER_LEN;
    let mut since_mac = 0;
    let mut mac_sequence = 0u32;
    for entry in &contents.entries {
        let lengths = field_lengths_for(entry)?;
        let plaintext: Vec<u8> = entry.fields.concat();
        let iv = entry_iv(keys, contents.sequence, entry, &plaintext);
        let body = aes128_ctr(&keys.storage, &iv, &plaintext);
        offset = write_entry(&mut buf, offset, entry.context, entry.sequence, &lengths, &iv, &body, &keys.integrity)?;
        since_mac += 1;
        if since_mac == SECTION_MAC_CADENCE {
            mac_sequence += 1;
            offset = write_section_mac(&mut buf, offset, mac_sequence, &keys.integrity)?;
            since_mac = 0;
        }
    }
    if since_mac > 0 {
        mac_sequence += 1;
        write_section_mac(&mut buf, offset, mac_sequence, &keys.integrity)?;
    }
    Ok(buf)
}

fn field_lengths_for(entry: &PlainEntry) -> Result<[u16; MAX_FIELDS], NvError> {
    if entry.context == SECTION_MAC_CONTEXT {
        return Err(NvError::FormatError(
            "context 0 is reserved for section MACs".into(),
        ));
    }
    if entry.fields.len() > MAX_FIELDS {
        return Err(NvError::FormatError(format!(
            "entry has {} fields, at most {MAX_FIELDS} allowed",
            entry.fields.len()
        )));
    }
    let mut lengths = [0u16; MAX_FIELDS];
    for (slot, field) in lengths.iter_mut().zip(&entry.fields) {
        *slot = u16::try_from(field.len()).map_err(|_| {
            NvError::CapacityError(format!("field of {} bytes exceeds u16", field.len()))
        })?;
    }
    Ok(lengths)
}

/// Deterministic per-entry IV bound to the entry identity and plaintext.
fn entry_iv(keys: &NvKeys, section_sequence: u32, entry: &PlainEntry, plaintext: &[u8]) -> Iv128 {
    let tag = hmac_sha256_parts(
        keys.integrity.as_bytes(),
        &[
            IV_LABEL,
            &section_sequence.to_le_bytes(),
            &entry.context.to_le_bytes(),
            &entry.sequence.to_le_bytes(),
            plaintext,
        ],
    )
    .expect("32-byte key");
    Iv128::from_slice(&tag.as_bytes()[..16]).expect("16 bytes")
}

#[allow(clippy::too_many_arguments)]
fn write_entry(
    buf: &mut [u8],
    offset: usize,
    context: u16,
    sequence: u32,
    lengths: &[u16; MAX_FIELDS],
    iv: &Iv128,
    body: &[u8],
    integrity: &MacKey256,
) -> Result<usize, NvError> {
    let end = offset + align4(ENTRY_HEADER_LEN + body.len());
    if end > SECTION_LEN {
        return Err(NvError::CapacityError(format!(
            "entry (context {context}, sequence {sequence}) of {} body bytes does not fit at offset {offset:#x}",
            body.len()
        )));
    }
    let table = length_table_bytes(lengths);
    let mac = hmac_sha256_parts(integrity.as_bytes(), &[iv.as_bytes(), &table, body]).expect("32-byte key");

    let header = &mut buf[offset..offset + ENTRY_HEADER_LEN];
    header[..2].copy_from_slice(&ENTRY_MAGIC.to_le_bytes());
    header[2..4].copy_from_slice(&context.to_le_bytes());
    header[4..8].copy_from_slice(&sequence.to_le_bytes());
    header[8..22].copy_from_slice(&table);
    header[22..24].fill(0);
    header[24..40].copy_from_slice(iv.as_bytes());
    header[40..72].copy_from_slice(mac.as_bytes());
    let body_start = offset + ENTRY_HEADER_LEN;
    buf[body_start..body_start + body.len()].copy_from_slice(body);
    buf[body_start + body.len()..end].fill(0);
    Ok(end)
}

fn write_section_mac(
    buf: &mut [u8],
    offset: usize,
    sequence: u32,
    integrity: &MacKey256,
) -> Result<usize, NvError> {
    let section_mac = hmac_sha256_parts(integrity.as_bytes(), &[&buf[..offset]]).expect("32-byte key");
    let mut lengths = [0u16; MAX_FIELDS];
    lengths[0] = 32;
    write_entry(
        buf,
        offset,
        SECTION_MAC_CONTEXT,
        sequence,
        &lengths,
        &Iv128::new([0; 16]),
        section_mac.as_bytes(),
        integrity,
    )
}
