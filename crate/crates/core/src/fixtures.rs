// SPDX-License-Identifier: Apache-2.0

//! Deterministic synthetic inputs: chip secrets, NV images with a planted
//! primary seed, and volume metadata for each protector type.
//!
//! Everything is driven by a ChaCha20 stream seeded from a `u64`, so the
//! same seed always yields byte-identical output.

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::crypto::{aes_ccm, Direction, Iv128};
use crate::fde::{
    mitigated_naive_key, pin_protector_key, stretch_pin, CcmBlob, Datum, DatumType, FdeError, StretchParams,
    TpmEncodedParts, VolumeMetadata, Vmk, DEFAULT_STRETCH_ROUNDS,
};
use crate::keys::{derive_from_chip_secret, AppId, AppIdentity, ChipSecret, DerivationConstant, NvKeys};
use crate::nv::{encode_image, NvError, PlainEntry, SectionContents};
use crate::tpm::{seal_object, PcrBank, PcrPolicy, PrimarySeed, TpmPublic, TpmSensitive};

/// Stand-in for the firmware's fixed derivation constant. The real value
/// lives in the fTPM binary; fixtures only need a fixed, documented block.
pub const FIXTURE_CONSTANT: DerivationConstant = DerivationConstant::new(*b"fixture-constant");

/// NV context holding the cached storage primary seed.
pub const SEED_CONTEXT: u16 = 0x0101;
/// Index of the seed within [`SEED_CONTEXT`]'s fields.
pub const SEED_FIELD: usize = 2;

/// PCRs bound by the fixture policies: firmware, boot manager, secure boot.
pub const POLICY_PCRS: [u8; 3] = [0, 4, 7];

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn random_bytes<const N: usize>(rng: &mut impl RngCore) -> [u8; N] {
    let mut out = [0u8; N];
    rng.fill_bytes(&mut out);
    out
}

fn random_vec(rng: &mut impl RngCore, len: usize) -> Vec<u8> {
    let mut out = vec![0u8; len];
    rng.fill_bytes(&mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChipFixture {
    pub secret: ChipSecret,
    pub constant: DerivationConstant,
    pub identity: AppIdentity,
}

impl ChipFixture {
    pub fn generate(seed: u64) -> Self {
        let mut rng = rng(seed ^ 0x6368_6970);
        let mut modulus = random_vec(&mut rng, 256);
        modulus[0] |= 0x80;
        Self {
            secret: ChipSecret::new(random_bytes(&mut rng)),
            constant: FIXTURE_CONSTANT,
            identity: AppIdentity::new(modulus, AppId::new(random_bytes(&mut rng))).expect("non-empty modulus"),
        }
    }

    pub fn nv_keys(&self) -> NvKeys {
        derive_from_chip_secret(&self.secret, &self.constant, &self.identity)
    }
}

#[derive(Debug, Clone)]
pub struct NvFixture {
    pub chip: ChipFixture,
    pub primary_seed: PrimarySeed,
    pub sections: [SectionContents; 2],
    pub image: Vec<u8>,
}

/// Random filler contexts plus one context whose third field is the
/// primary seed. The active section is the second physical one; the first
/// is an older, empty section.
pub fn nv_fixture(seed: u64) -> Result<NvFixture, NvError> {
    let chip = ChipFixture::generate(seed);
    let mut rng = rng(seed ^ 0x6e76);
    let primary_seed = PrimarySeed::new(random_bytes(&mut rng));

    let mut entries = Vec::new();
    for context in 2..14u16 {
        let versions = rng.gen_range(1..=3u32);
        for sequence in 1..=versions {
            let field_count = rng.gen_range(1..=4);
            let fields = (0..field_count)
                .map(|_| {
                    let len = rng.gen_range(1..160);
                    random_vec(&mut rng, len)
                })
                .collect();
            entries.push(PlainEntry { context, sequence, fields });
        }
    }
    let seed_fields = vec![
        b"hierarchy".to_vec(),
        random_vec(&mut rng, 20),
        primary_seed.as_bytes().to_vec(),
        random_vec(&mut rng, 44),
    ];
    let at = rng.gen_range(0..=entries.len());
    entries.insert(
        at,
        PlainEntry {
            context: SEED_CONTEXT,
            sequence: 1,
            fields: seed_fields,
        },
    );

    let active = rng.gen_range(2..1_000u32);
    let sections = [
        SectionContents::empty(active - 1),
        SectionContents {
            sequence: active,
            entries,
        },
    ];
    let image = encode_image(&sections, &chip.nv_keys())?;
    Ok(NvFixture {
        chip,
        primary_seed,
        sections,
        image,
    })
}

/// `len` random bytes with `seed` copied in at `offset`.
pub fn plant_seed(rng_seed: u64, len: usize, seed: &PrimarySeed, offset: usize) -> Vec<u8> {
    let mut buf = random_vec(&mut rng(rng_seed), len);
    buf[offset..offset + 32].copy_from_slice(seed.as_bytes());
    buf
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtectorKind {
    TpmOnly,
    TpmPin { pin: String },
    /// Sealed secret used verbatim as a passphrase. A PIN here is only the
    /// object's auth value.
    Naive { pin: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtectorOptions {
    /// Bind the object to PCR values that differ from the fixture bank.
    pub mismatched_pcrs: bool,
    pub stretch_rounds: u32,
}

impl Default for ProtectorOptions {
    fn default() -> Self {
        Self {
            mismatched_pcrs: false,
            stretch_rounds: DEFAULT_STRETCH_ROUNDS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtectorFixture {
    pub metadata: VolumeMetadata,
    /// Planted VMK for the TPM-only and TPM+PIN kinds.
    pub vmk: Option<Vmk>,
    /// Planted secret for the naive kind.
    pub sealed_secret: Option<[u8; 32]>,
    /// Passphrase for the hardened naive variant, when a PIN was given.
    pub mitigated_passphrase: Option<String>,
    /// Platform state the fixture was measured against.
    pub bank: PcrBank,
}

fn measured_bank(rng: &mut impl RngCore) -> PcrBank {
    let mut bank = PcrBank::new();
    for &pcr in &POLICY_PCRS {
        for _ in 0..3 {
            bank.extend(pcr.into(), &random_bytes::<32>(rng)).expect("valid index");
        }
    }
    bank
}

fn seal(
    rng: &mut impl RngCore,
    parent: &PrimarySeed,
    policy: PcrPolicy,
    auth_value: Vec<u8>,
    data: Vec<u8>,
) -> Result<Vec<u8>, FdeError> {
    let public = TpmPublic::sealed_data(policy.digest().as_bytes().to_vec(), random_vec(rng, 32));
    let sensitive = TpmSensitive {
        auth_value,
        seed_value: random_bytes(rng),
        sensitive_data: data,
    };
    let private = seal_object(&sensitive, &public, parent, &Iv128::new(random_bytes(rng)))?;
    TpmEncodedParts {
        private,
        public,
        pcr_policy: policy,
    }
    .to_bytes()
}

fn inner_vmk_datum(rng: &mut impl RngCore, vmk: &Vmk) -> Vec<u8> {
    // 12 bytes of key-entry header ahead of the key itself.
    let mut payload = random_vec(rng, 12);
    payload.extend_from_slice(vmk.as_bytes());
    Datum::new(DatumType::Inner, payload).to_bytes()
}

pub fn protector_fixture(
    seed: u64,
    parent: &PrimarySeed,
    kind: &ProtectorKind,
    options: &ProtectorOptions,
) -> Result<ProtectorFixture, FdeError> {
    let mut rng = rng(seed ^ 0x0066_6465);
    let bank = measured_bank(&mut rng);
    let mut policy = PcrPolicy::from_bank(&bank, &POLICY_PCRS)?;
    if options.mismatched_pcrs {
        // Separate stream, so the planted keys match the matched-policy
        // fixture for the same seed.
        let mut other = self::rng(seed ^ 0x0070_6372);
        let mut expected = BTreeMap::new();
        for index in policy.selection() {
            expected.insert(index, crate::crypto::Digest256::new(random_bytes(&mut other)));
        }
        policy = PcrPolicy::new(expected)?;
    }
    let auth_value = random_vec(&mut rng, 16);

    let mut fixture = ProtectorFixture {
        metadata: VolumeMetadata::new(Vec::new())?,
        vmk: None,
        sealed_secret: None,
        mitigated_passphrase: None,
        bank,
    };
    let datums = match kind {
        ProtectorKind::TpmOnly => {
            let vmk = Vmk::new(random_bytes(&mut rng));
            let inner = inner_vmk_datum(&mut rng, &vmk);
            fixture.vmk = Some(vmk);
            vec![Datum::new(DatumType::TpmEncoded, seal(&mut rng, parent, policy, auth_value, inner)?)]
        }
        ProtectorKind::TpmPin { pin } => {
            let vmk = Vmk::new(random_bytes(&mut rng));
            let unsealed: [u8; 32] = random_bytes(&mut rng);
            let params = StretchParams {
                salt: random_bytes(&mut rng),
                rounds: options.stretch_rounds,
            };
            let key = pin_protector_key(&unsealed, &stretch_pin(pin, &params)?);
            let nonce = random_bytes(&mut rng);
            let inner = inner_vmk_datum(&mut rng, &vmk);
            let sealed = aes_ccm(&key, &nonce, b"", &inner, Direction::Encrypt)
                .map_err(|e| FdeError::FormatError(e.to_string()))?;
            fixture.vmk = Some(vmk);
            vec![
                Datum::new(
                    DatumType::TpmEncoded,
                    seal(&mut rng, parent, policy, auth_value, unsealed.to_vec())?,
                ),
                Datum::new(DatumType::Stretch, params.to_bytes()),
                Datum::new(DatumType::AesCcmBlob, CcmBlob { nonce, sealed }.to_bytes()),
            ]
        }
        ProtectorKind::Naive { pin } => {
            let secret: [u8; 32] = random_bytes(&mut rng);
            let auth = pin.as_ref().map(|p| p.as_bytes().to_vec()).unwrap_or_default();
            if let Some(pin) = pin {
                fixture.mitigated_passphrase = Some(mitigated_naive_key(&secret, pin)?);
            }
            fixture.sealed_secret = Some(secret);
            vec![Datum::new(DatumType::SealedSecret, seal(&mut rng, parent, policy, auth, secret.to_vec())?)]
        }
    };
    fixture.metadata = VolumeMetadata::new(datums)?;
    Ok(fixture)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fde::{extract_key_naive, extract_vmk_tpm_only, extract_vmk_tpm_pin};
    use crate::nv::{decrypt_image, parse_image};
    use crate::tpm::check_pcr_policy;

    #[test]
    fn nv_fixture_is_deterministic_and_decrypts() {
        let a = nv_fixture(7).unwrap();
        assert_eq!(a.image, nv_fixture(7).unwrap().image);
        assert_ne!(a.image, nv_fixture(8).unwrap().image);
        let state = decrypt_image(&parse_image(&a.image).unwrap(), &a.chip.nv_keys()).unwrap();
        assert_eq!(state.failed_entries(), 0);
        assert_eq!(state.contexts[&SEED_CONTEXT][0].fields[SEED_FIELD], a.primary_seed.as_bytes());
    }

    #[test]
    fn protectors_open_with_the_planted_seed() {
        let nv = nv_fixture(1).unwrap();
        let plain = decrypt_image(&parse_image(&nv.image).unwrap(), &nv.chip.nv_keys()).unwrap().plaintext();

        let only = protector_fixture(2, &nv.primary_seed, &ProtectorKind::TpmOnly, &Default::default()).unwrap();
        let datum = only.metadata.require(DatumType::TpmEncoded).unwrap();
        assert_eq!(Some(extract_vmk_tpm_only(datum, &plain).unwrap()), only.vmk);

        let options = ProtectorOptions { stretch_rounds: 16, ..Default::default() };
        let pin = ProtectorKind::TpmPin { pin: "2580".into() };
        let guarded = protector_fixture(3, &nv.primary_seed, &pin, &options).unwrap();
        assert_eq!(Some(extract_vmk_tpm_pin(&guarded.metadata, &plain, "2580").unwrap()), guarded.vmk);
        assert_eq!(extract_vmk_tpm_pin(&guarded.metadata, &plain, "2581"), Err(FdeError::WrongPin));

        let naive = protector_fixture(4, &nv.primary_seed, &ProtectorKind::Naive { pin: None }, &options).unwrap();
        assert_eq!(extract_key_naive(&naive.metadata, &plain).unwrap().len(), 44);
        assert!(naive.mitigated_passphrase.is_none());
    }

    #[test]
    fn mismatched_policy_does_not_match_bank() {
        let seed = PrimarySeed::new([9; 32]);
        let good = protector_fixture(5, &seed, &ProtectorKind::TpmOnly, &Default::default()).unwrap();
        let bad_opts = ProtectorOptions { mismatched_pcrs: true, ..Default::default() };
        let bad = protector_fixture(5, &seed, &ProtectorKind::TpmOnly, &bad_opts).unwrap();
        let policy_of = |f: &ProtectorFixture| {
            crate::fde::split_tpm_encoded_datum(f.metadata.require(DatumType::TpmEncoded).unwrap())
                .unwrap()
                .pcr_policy
        };
        assert!(check_pcr_policy(&good.bank, &policy_of(&good)));
        assert!(!check_pcr_policy(&bad.bank, &policy_of(&bad)));
        assert_eq!(good.vmk, bad.vmk);
    }

    #[test]
    fn planted_buffer() {
        let seed = PrimarySeed::new([0xAB; 32]);
        let buf = plant_seed(1, 100, &seed, 68);
        assert_eq!(&buf[68..], seed.as_bytes());
    }
}
