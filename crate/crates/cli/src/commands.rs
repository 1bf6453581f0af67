// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;

use ftpm_core::ccp::{extract_protected_slot, AlignmentPolicy, Ccp, CcpMode, LsbState};
use ftpm_core::fde::{
    estimate_bruteforce_time, estimate_table, extract_key_naive, extract_vmk_tpm_only, extract_vmk_tpm_pin,
    mitigated_naive_key, parse_volume_metadata, render_duration, split_tpm_encoded_datum, DatumType, PinCracker,
    PinSpace, DTPM_RATE, FTPM_RATE,
};
use ftpm_core::fixtures::{self, ChipFixture, ProtectorKind, ProtectorOptions};
use ftpm_core::keys::{
    derive_nv_keys, derive_seed, AppId, AppIdentity, ChipSecret, DerivationConstant, DerivationSeed, NvKeys,
};
use ftpm_core::nv::{decrypt_image, encode_image, parse_image, NvState, PlainEntry, SectionContents};
use ftpm_core::tpm::{find_all_primary_seeds, find_primary_seed, unseal_object, PrimarySeed};
use ftpm_core::tpm::{TpmPrivate, TpmPublic};

use crate::error::CliError;
use crate::hexio::{parse_hex, parse_hex_array, read_file, write_file};
use crate::{KeyArgs, LsbMode, ObjectArgs, Output, TpmKind, VmkMode};

// ---------------------------------------------------------------------------
// key material

#[derive(Debug, Serialize, Deserialize)]
struct ChipFile {
    secret: String,
    constant: String,
    modulus: String,
    app_id: String,
}

enum KeySource {
    Secret(ChipSecret, DerivationConstant),
    Seed(DerivationSeed),
}

fn identity(modulus: Option<&str>, app_id: Option<&str>) -> Result<AppIdentity, CliError> {
    let modulus = modulus.ok_or_else(|| CliError::usage("--modulus is required"))?;
    let app_id = app_id.ok_or_else(|| CliError::usage("--app-id is required"))?;
    Ok(AppIdentity::new(
        parse_hex("modulus", modulus, None)?,
        AppId::new(parse_hex_array("app-id", app_id)?),
    )?)
}

fn resolve_keys(args: &KeyArgs) -> Result<(KeySource, AppIdentity), CliError> {
    if let Some(path) = &args.chip {
        let chip: ChipFile = serde_json::from_slice(&read_file(path)?)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let source = KeySource::Secret(
            ChipSecret::new(parse_hex_array("secret", &chip.secret)?),
            DerivationConstant::new(parse_hex_array("constant", &chip.constant)?),
        );
        return Ok((source, identity(Some(&chip.modulus), Some(&chip.app_id))?));
    }
    let source = match (&args.secret, &args.seed) {
        (Some(secret), None) => {
            let constant = args
                .constant
                .as_deref()
                .ok_or_else(|| CliError::usage("--constant is required with --secret"))?;
            KeySource::Secret(
                ChipSecret::new(parse_hex_array("secret", secret)?),
                DerivationConstant::new(parse_hex_array("constant", constant)?),
            )
        }
        (None, Some(seed)) => KeySource::Seed(DerivationSeed::new(parse_hex_array("seed", seed)?)),
        _ => return Err(CliError::usage("exactly one of --chip, --secret or --seed is required")),
    };
    Ok((source, identity(args.modulus.as_deref(), args.app_id.as_deref())?))
}

fn nv_keys(out: &Output, args: &KeyArgs) -> Result<NvKeys, CliError> {
    let (source, identity) = resolve_keys(args)?;
    let seed = match source {
        KeySource::Secret(secret, constant) => {
            let seed = derive_seed(&secret, &constant);
            out.note(format!("derivation seed {}", seed.to_hex()));
            seed
        }
        KeySource::Seed(seed) => seed,
    };
    Ok(derive_nv_keys(&seed, &identity))
}

pub fn derive_keys(out: &Output, args: &KeyArgs) -> Result<(), CliError> {
    let keys = nv_keys(out, args)?;
    out.emit(
        &json!({ "storage": keys.storage.to_hex(), "integrity": keys.integrity.to_hex() }),
        || format!("storage   {}\nintegrity {}\n", keys.storage.to_hex(), keys.integrity.to_hex()),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// NV images

fn default_active() -> u32 {
    1
}

fn default_verified() -> bool {
    true
}

/// Decrypted NV state; also the nv-forge manifest.
#[derive(Debug, Serialize, Deserialize)]
struct NvDocument {
    #[serde(default = "default_active")]
    active_section: u32,
    #[serde(default)]
    contexts: BTreeMap<u16, Vec<NvRecord>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NvRecord {
    sequence: u32,
    fields: Vec<String>,
    #[serde(default = "default_verified")]
    verified: bool,
}

impl NvDocument {
    fn from_state(state: &NvState) -> Self {
        let contexts = state
            .contexts
            .iter()
            .map(|(&context, records)| {
                let records = records
                    .iter()
                    .map(|r| NvRecord {
                        sequence: r.sequence,
                        fields: r.fields.iter().map(hex::encode).collect(),
                        verified: r.verified,
                    })
                    .collect();
                (context, records)
            })
            .collect();
        Self {
            active_section: state.active_section,
            contexts,
        }
    }

    /// The older section is written empty at sequence `active - 1` in the
    /// first physical slot; the active one follows.
    fn to_sections(&self) -> Result<[SectionContents; 2], CliError> {
        if self.active_section == 0 {
            return Err(CliError::usage("active_section must be at least 1"));
        }
        let mut entries = Vec::new();
        for (&context, records) in &self.contexts {
            for record in records {
                if !record.verified {
                    return Err(CliError::usage(format!(
                        "context {context} sequence {} is marked unverified and has no plaintext to forge",
                        record.sequence
                    )));
                }
                let fields = record
                    .fields
                    .iter()
                    .map(|f| parse_hex(&format!("context {context} field"), f, None))
                    .collect::<Result<_, _>>()?;
                entries.push(PlainEntry {
                    context,
                    sequence: record.sequence,
                    fields,
                });
            }
        }
        Ok([
            SectionContents::empty(self.active_section - 1),
            SectionContents {
                sequence: self.active_section,
                entries,
            },
        ])
    }
}

fn decrypt_file(image: &Path, keys: &NvKeys) -> Result<NvState, CliError> {
    let raw = read_file(image)?;
    Ok(decrypt_image(&parse_image(&raw)?, keys)?)
}

pub fn nv_decrypt(out: &Output, image: &Path, args: &KeyArgs, plaintext_out: Option<&Path>) -> Result<(), CliError> {
    let keys = nv_keys(out, args)?;
    let state = decrypt_file(image, &keys)?;
    let failed = state.failed_entries();
    let total = state.entry_count();
    let bad_macs = state.section_macs.iter().filter(|m| !m.verified).count();
    out.note(format!(
        "active section {}: {total} entries, {failed} failed MAC, {} section MACs ({bad_macs} failed)",
        state.active_section,
        state.section_macs.len()
    ));

    if let Some(path) = plaintext_out {
        write_file(path, &state.plaintext())?;
    }
    out.emit(&serde_json::to_value(NvDocument::from_state(&state)).expect("serializable"), || {
        let mut text = format!("active section {}\n", state.active_section);
        for (context, records) in &state.contexts {
            for r in records {
                let lengths: Vec<String> = r.fields.iter().map(|f| f.len().to_string()).collect();
                let status = if r.verified { "ok " } else { "BAD" };
                let _ = writeln!(
                    text,
                    "{status} context {context:#06x} seq {:>4}  fields [{}]",
                    r.sequence,
                    lengths.join(", ")
                );
            }
        }
        text
    });

    if total > 0 && failed == total {
        return Err(CliError::failure(format!(
            "all {total} entries failed MAC verification (wrong keys?)"
        )));
    }
    if failed > 0 {
        eprintln!("warning: {failed} of {total} entries failed MAC verification");
    }
    Ok(())
}

pub fn nv_forge(out: &Output, manifest: &Path, args: &KeyArgs, path: &Path) -> Result<(), CliError> {
    let doc: NvDocument = serde_json::from_slice(&read_file(manifest)?)
        .map_err(|e| CliError::usage(format!("{}: {e}", manifest.display())))?;
    let keys = nv_keys(out, args)?;
    let image = encode_image(&doc.to_sections()?, &keys)?;
    write_file(path, &image)?;
    let entries: usize = doc.contexts.values().map(Vec::len).sum();
    out.emit(
        &json!({ "out": path.display().to_string(), "bytes": image.len(), "entries": entries }),
        || format!("wrote {} bytes ({entries} entries) to {}\n", image.len(), path.display()),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// sealed objects

fn load_object(args: &ObjectArgs) -> Result<(TpmPublic, TpmPrivate), CliError> {
    let exact = |what: &str, used: usize, len: usize| {
        if used == len {
            Ok(())
        } else {
            Err(CliError::usage(format!("{what}: {} trailing bytes", len - used)))
        }
    };
    match (&args.blob, &args.public, &args.private) {
        (Some(blob), None, None) => {
            let raw = read_file(blob)?;
            let (private, used) = TpmPrivate::unmarshal(&raw)?;
            let (public, used_public) = TpmPublic::unmarshal(&raw[used..])?;
            if used + used_public != raw.len() {
                // A full TPM-encoded datum payload carries a PCR policy too.
                let parts = ftpm_core::fde::TpmEncodedParts::from_bytes(&raw)?;
                return Ok((parts.public, parts.private));
            }
            Ok((public, private))
        }
        (None, Some(public), Some(private)) => {
            let raw_public = read_file(public)?;
            let (public, used) = TpmPublic::unmarshal(&raw_public)?;
            exact("public", used, raw_public.len())?;
            let raw_private = read_file(private)?;
            let (private, used) = TpmPrivate::unmarshal(&raw_private)?;
            exact("private", used, raw_private.len())?;
            Ok((public, private))
        }
        _ => Err(CliError::usage("give either --blob or both --public and --private")),
    }
}

pub fn unseal(
    out: &Output,
    object: &ObjectArgs,
    nv_plaintext: Option<&Path>,
    seed: Option<&str>,
) -> Result<(), CliError> {
    let (public, private) = load_object(object)?;
    let (seed, offset) = match (seed, nv_plaintext) {
        (Some(hex_seed), _) => (PrimarySeed::new(parse_hex_array("seed", hex_seed)?), None),
        (None, Some(path)) => {
            let found = find_primary_seed(&read_file(path)?, &public, &private)?;
            out.note(format!("parent seed at offset {}", found.offset));
            (found.seed, Some(found.offset))
        }
        (None, None) => return Err(CliError::usage("--nv-plaintext or --seed is required")),
    };
    let sensitive = unseal_object(&public, &private, &seed)?;
    out.emit(
        &json!({
            "seed": seed.to_hex(),
            "seed_offset": offset,
            "auth_value": hex::encode(&sensitive.auth_value),
            "seed_value": hex::encode(sensitive.seed_value),
            "sensitive_data": hex::encode(&sensitive.sensitive_data),
        }),
        || {
            let mut text = String::new();
            if let Some(offset) = offset {
                let _ = writeln!(text, "seed_offset    {offset}");
            }
            let _ = writeln!(text, "seed           {}", seed.to_hex());
            let _ = writeln!(text, "auth_value     {}", hex::encode(&sensitive.auth_value));
            let _ = writeln!(text, "seed_value     {}", hex::encode(sensitive.seed_value));
            let _ = writeln!(text, "sensitive_data {}", hex::encode(&sensitive.sensitive_data));
            text
        },
    );
    Ok(())
}

pub fn find_seed(out: &Output, object: &ObjectArgs, nv_plaintext: &Path) -> Result<(), CliError> {
    let (public, private) = load_object(object)?;
    let plaintext = read_file(nv_plaintext)?;
    let matches = find_all_primary_seeds(&plaintext, &public, &private)?;
    let Some(first) = matches.first() else {
        return Err(CliError::failure(format!(
            "no parent seed in {} windows of {}",
            plaintext.len().saturating_sub(31),
            nv_plaintext.display()
        )));
    };
    if matches.len() > 1 {
        out.note(format!("{} verifying windows; reporting the lowest", matches.len()));
    }
    out.emit(
        &json!({ "offset": first.offset, "seed": first.seed.to_hex(), "matches": matches.len() }),
        || format!("offset {}\nseed   {}\n", first.offset, first.seed.to_hex()),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// volume keys

pub struct CrackArgs {
    pub charset: String,
    pub length: usize,
    pub jobs: usize,
}

pub fn vmk(
    out: &Output,
    mode: VmkMode,
    metadata: &Path,
    nv_plaintext: &Path,
    pin: Option<&str>,
    crack: Option<CrackArgs>,
) -> Result<(), CliError> {
    let metadata = parse_volume_metadata(&read_file(metadata)?)?;
    let plaintext = read_file(nv_plaintext)?;
    if crack.is_some() && mode != VmkMode::TpmPin {
        return Err(CliError::usage("--crack only applies to --mode tpm-pin"));
    }
    let start = Instant::now();

    let mut report = json!({
        "protector": null, "vmk": null, "passphrase": null, "pin": null,
        "attempts": 0, "elapsed_s": null, "rate": null,
    });
    let line = match mode {
        VmkMode::TpmOnly => {
            let vmk = extract_vmk_tpm_only(metadata.require(DatumType::TpmEncoded)?, &plaintext)?;
            report["protector"] = json!("tpm-only");
            report["vmk"] = json!(vmk.to_hex());
            vmk.to_hex()
        }
        VmkMode::TpmPin => {
            report["protector"] = json!("tpm-pin");
            let (vmk, pin, attempts, rate) = match (pin, crack) {
                (Some(pin), None) => (extract_vmk_tpm_pin(&metadata, &plaintext, pin)?, pin.to_string(), 1, None),
                (None, Some(plan)) => {
                    let space = PinSpace::named(&plan.charset, plan.length)?;
                    out.note(format!("searching {} candidates with {} worker(s)", space.size(), plan.jobs));
                    let cracker = PinCracker::prepare(&metadata, &plaintext)?;
                    let outcome = cracker.run(space, plan.jobs)?;
                    let rate = outcome.rate();
                    (outcome.vmk, outcome.pin, outcome.attempts, Some(rate))
                }
                _ => return Err(CliError::usage("tpm-pin mode needs --pin or --crack")),
            };
            report["vmk"] = json!(vmk.to_hex());
            report["pin"] = json!(pin);
            report["attempts"] = json!(attempts);
            report["rate"] = json!(rate);
            vmk.to_hex()
        }
        VmkMode::Naive => {
            let passphrase = extract_key_naive(&metadata, &plaintext)?;
            let passphrase = match pin {
                None => {
                    report["protector"] = json!("naive");
                    passphrase
                }
                Some(pin) => {
                    let secret: [u8; 32] = STANDARD
                        .decode(&passphrase)
                        .ok()
                        .and_then(|s| s.try_into().ok())
                        .expect("extract_key_naive encodes 32 bytes");
                    report["protector"] = json!("naive-mitigated");
                    report["pin"] = json!(pin);
                    mitigated_naive_key(&secret, pin)?
                }
            };
            report["passphrase"] = json!(passphrase);
            passphrase
        }
    };
    let elapsed = start.elapsed().as_secs_f64();
    report["elapsed_s"] = json!(elapsed);
    out.emit(&report, || {
        let mut text = format!("{line}\n");
        if let Some(rate) = report["rate"].as_f64() {
            let _ = writeln!(
                text,
                "pin {}  attempts {}  elapsed {elapsed:.2}s  rate {rate:.1}/s",
                report["pin"].as_str().unwrap_or_default(),
                report["attempts"]
            );
        }
        text
    });
    Ok(())
}

// ---------------------------------------------------------------------------
// LSB extraction demo

/// Protected-slot content when none is given.
const DEMO_SLOT: [u8; 16] = *b"lsb demo secret!";

pub fn lsb_demo(out: &Output, slots: usize, mode: LsbMode, seed_slot: Option<&str>) -> Result<(), CliError> {
    let planted = match seed_slot {
        Some(text) => parse_hex_array::<16>("seed-slot", text)?,
        None => DEMO_SLOT,
    };
    let policy = match mode {
        LsbMode::Unaligned => AlignmentPolicy::UnalignedAllowed,
        LsbMode::Aligned => AlignmentPolicy::AlignedOnly,
    };
    let mut ccp = Ccp::new(LsbState::new(slots, planted)?, CcpMode::new(policy));
    let (target, writable) = (0, 1);
    out.note(format!("{slots} slots, protected target {target}, writable neighbour {writable}"));
    let result = extract_protected_slot(&mut ccp, writable, target);
    out.note(format!(
        "{} device jobs, {} partial key disclosures",
        ccp.jobs(),
        ccp.partial_key_disclosures()
    ));
    let extraction = result?;
    let recovered = hex::encode(extraction.bytes);
    let matches = extraction.bytes == planted;
    out.emit(
        &json!({
            "target_slot": target,
            "writable_slot": writable,
            "recovered": recovered,
            "matches_planted": matches,
            "op_count": extraction.op_count,
            "candidates_per_window": extraction.candidates_per_window,
        }),
        || {
            let windows: Vec<String> = extraction.candidates_per_window.iter().map(usize::to_string).collect();
            format!(
                "recovered  {recovered}\nmatches    {matches}\nop_count   {}\ncandidates {}\n",
                extraction.op_count,
                windows.join(" ")
            )
        },
    );
    if matches {
        Ok(())
    } else {
        Err(CliError::failure("recovered slot differs from the planted value"))
    }
}

// ---------------------------------------------------------------------------
// estimates

pub fn estimate(out: &Output, table: bool, entropy: Option<u32>, tpm: TpmKind) -> Result<(), CliError> {
    if table {
        let rows = estimate_table();
        let value = json!(rows
            .iter()
            .map(|r| json!({
                "description": r.description,
                "entropy_bits": r.entropy_bits,
                "ftpm": r.ftpm(),
                "dtpm": r.dtpm(),
                "ftpm_seconds": r.ftpm_seconds,
                "dtpm_seconds": r.dtpm_seconds,
            }))
            .collect::<Vec<_>>());
        out.emit(&value, || {
            let mut text = format!("{:<14} {:>4}  {:<12} {}\n", "credential", "bits", "fTPM", "dTPM");
            for r in &rows {
                let _ = writeln!(text, "{:<14} {:>4}  {:<12} {}", r.description, r.entropy_bits, r.ftpm(), r.dtpm());
            }
            text
        });
        return Ok(());
    }
    let bits = entropy.ok_or_else(|| CliError::usage("--table or --entropy is required"))?;
    if bits > 1000 {
        return Err(CliError::usage("--entropy above 1000 bits is not meaningful"));
    }
    let (rate, name) = match tpm {
        TpmKind::Ftpm => (FTPM_RATE, "ftpm"),
        TpmKind::Dtpm => (DTPM_RATE, "dtpm"),
    };
    let seconds = estimate_bruteforce_time(bits, rate);
    let rendered = render_duration(seconds);
    out.emit(
        &json!({ "entropy_bits": bits, "tpm": name, "seconds": seconds, "rendered": rendered }),
        || format!("{rendered}\n"),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// fixture set

fn encode_metadata(fixture: &fixtures::ProtectorFixture) -> Vec<u8> {
    fixture.metadata.to_bytes()
}

pub fn fixtures(
    out: &Output,
    dir: &Path,
    seed: u64,
    pin: &str,
    stretch_rounds: u32,
    mismatched_pcrs: bool,
) -> Result<(), CliError> {
    if pin.is_empty() {
        return Err(CliError::usage("--pin must not be empty"));
    }
    if stretch_rounds == 0 {
        return Err(CliError::usage("--stretch-rounds must be positive"));
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::usage(format!("{}: {e}", dir.display())))?;
    let file = |name: &str| dir.join(name);

    let nv = fixtures::nv_fixture(seed)?;
    let chip = &nv.chip;
    let chip_file = ChipFile {
        secret: chip.secret.to_hex(),
        constant: chip.constant.to_hex(),
        modulus: hex::encode(chip.identity.signing_modulus()),
        app_id: chip.identity.app_id().to_hex(),
    };
    write_file(&file("chip.json"), &serde_json::to_vec_pretty(&chip_file).expect("serializable"))?;
    write_file(&file("nv.bin"), &nv.image)?;
    let state = decrypt_image(&parse_image(&nv.image)?, &chip.nv_keys())?;
    let manifest = NvDocument::from_state(&state);
    write_file(&file("nv-manifest.json"), &serde_json::to_vec_pretty(&manifest).expect("serializable"))?;
    let plaintext = state.plaintext();
    write_file(&file("nv-plaintext.bin"), &plaintext)?;

    let options = ProtectorOptions {
        mismatched_pcrs,
        stretch_rounds,
    };
    let parent = &nv.primary_seed;
    let tpm_only = fixtures::protector_fixture(seed + 1, parent, &ProtectorKind::TpmOnly, &options)?;
    let tpm_pin = fixtures::protector_fixture(seed + 2, parent, &ProtectorKind::TpmPin { pin: pin.into() }, &options)?;
    let naive = fixtures::protector_fixture(seed + 3, parent, &ProtectorKind::Naive { pin: None }, &options)?;
    let naive_pin =
        fixtures::protector_fixture(seed + 4, parent, &ProtectorKind::Naive { pin: Some(pin.into()) }, &options)?;
    write_file(&file("tpm-only.fvmd"), &encode_metadata(&tpm_only))?;
    write_file(&file("tpm-pin.fvmd"), &encode_metadata(&tpm_pin))?;
    write_file(&file("naive.fvmd"), &encode_metadata(&naive))?;
    write_file(&file("naive-pin.fvmd"), &encode_metadata(&naive_pin))?;

    let parts = split_tpm_encoded_datum(tpm_only.metadata.require(DatumType::TpmEncoded)?)?;
    let mut blob = parts.private.marshal()?;
    blob.extend_from_slice(&parts.public.marshal()?);
    write_file(&file("tpm-only.blob"), &blob)?;
    let sensitive = unseal_object(&parts.public, &parts.private, parent)?;
    let seed_offset = find_primary_seed(&plaintext, &parts.public, &parts.private)?.offset;

    let passphrase = |f: &fixtures::ProtectorFixture| f.sealed_secret.map(|s| STANDARD.encode(s));
    let expected = json!({
        "seed": seed,
        "primary_seed": parent.to_hex(),
        "primary_seed_offset": seed_offset,
        "nv_keys": { "storage": chip.nv_keys().storage.to_hex(), "integrity": chip.nv_keys().integrity.to_hex() },
        "derivation_seed": derive_seed(&chip.secret, &chip.constant).to_hex(),
        "tpm_only_vmk": tpm_only.vmk.map(|v| v.to_hex()),
        "tpm_only_sensitive_data": hex::encode(&sensitive.sensitive_data),
        "tpm_pin_vmk": tpm_pin.vmk.map(|v| v.to_hex()),
        "pin": pin,
        "stretch_rounds": stretch_rounds,
        "naive_passphrase": passphrase(&naive),
        "naive_pin_passphrase": passphrase(&naive_pin),
        "mitigated_passphrase": naive_pin.mitigated_passphrase,
        "mismatched_pcrs": mismatched_pcrs,
    });
    write_file(&file("expected.json"), &serde_json::to_vec_pretty(&expected).expect("serializable"))?;
    out.note(format!("fixture chip secret {}", ChipFixture::generate(seed).secret.to_hex()));
    out.emit(&json!({ "dir": dir.display().to_string(), "expected": expected }), || {
        format!("wrote fixture set to {}\n", dir.display())
    });
    Ok(())
}
