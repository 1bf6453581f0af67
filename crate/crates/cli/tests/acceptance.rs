// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite: ten end-to-end criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so every line is printed even when
//! output is captured. The process exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::Value;
use sha2::{Digest, Sha256};

use ftpm_core::ccp::{
    extract_protected_slot, AlignmentPolicy, Ccp, CcpError, CcpErrorKind, CcpMode, LsbState, DEFAULT_SLOTS,
    MAX_EXTRACTION_OPS,
};
use ftpm_core::crypto::{Digest256, Iv128};
use ftpm_core::fde::{
    brute_force_pin, extract_key_naive, extract_vmk_tpm_only, extract_vmk_tpm_pin, mitigated_naive_key,
    stretch_invocations, stretch_pin, DatumType, FdeError, PinSpace, StretchParams,
};
use ftpm_core::fixtures::{nv_fixture, plant_seed, protector_fixture, ProtectorKind, ProtectorOptions};
use ftpm_core::keys::{
    derive_from_chip_secret, derive_nv_keys, derive_seed, AppId, AppIdentity, ChipSecret, DerivationConstant, NvKeys,
};
use ftpm_core::nv::{
    decrypt_image, encode_image, parse_image, PlainEntry, SectionContents, SECTION_LEN,
    SECTION_MAC_CONTEXT,
};
use ftpm_core::tpm::{
    check_pcr_policy, find_primary_seed, seal_object, unseal_object, PcrBank,
    PrimarySeed, TpmError, TpmPublic, TpmSensitive, PCR_COUNT,
};

const BIN: &str = env!("CARGO_BIN_EXE_ftpm-tool");

type Verdict = Result<String, String>;
/// context -> [(sequence, fields)]
type Manifest = BTreeMap<u16, Vec<(u32, Vec<Vec<u8>>)>>;
type Criterion = (u8, &'static str, fn() -> Verdict, Duration);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn bytes<const N: usize>(rng: &mut impl RngCore) -> [u8; N] {
    let mut out = [0u8; N];
    rng.fill_bytes(&mut out);
    out
}

fn vec(rng: &mut impl RngCore, len: usize) -> Vec<u8> {
    let mut out = vec![0u8; len];
    rng.fill_bytes(&mut out);
    out
}

fn cli(args: &[&str]) -> Result<Value, String> {
    let mut full = vec!["--json"];
    full.extend_from_slice(args);
    let out = Command::new(BIN).args(&full).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------------

/// Splits "7.4 mo" / "1.3·10^6 yr" into (value, unit).
fn parse_rendered(text: &str) -> (f64, String) {
    let (number, unit) = text.split_once(' ').expect("value and unit");
    let value = match number.split_once("·10^") {
        Some((m, e)) => m.parse::<f64>().unwrap() * 10f64.powi(e.parse().unwrap()),
        None => number.parse().unwrap(),
    };
    (value, unit.to_string())
}

fn c1_bruteforce_table() -> Verdict {
    // (entropy row, rate, reference cell, tolerance in the cell's unit)
    let reference: [(usize, &str, &str, f64); 8] = [
        (0, "ftpm", "0.5 sec", 0.0),
        (1, "ftpm", "33 sec", 0.0),
        (2, "ftpm", "34 min", 1.0),
        (3, "ftpm", "2.1 yr", 0.1),
        (0, "dtpm", "3.5 days", 0.0),
        (1, "dtpm", "7.3 mo", 0.1),
        (2, "dtpm", "41 yr", 1.0),
        (3, "dtpm", "1.3·10^6 yr", 0.05e6),
    ];
    let table = cli(&["estimate", "--table"])?;
    let rows = table.as_array().ok_or("table is not an array")?;
    ensure!(rows.len() == 4, "{} rows", rows.len());
    let bits: Vec<u64> = rows.iter().map(|r| r["entropy_bits"].as_u64().unwrap()).collect();
    ensure!(bits == [9, 15, 21, 36], "entropy rows {bits:?}");
    let mut cells = Vec::new();
    for (row, tpm, want, tol) in reference {
        let got = rows[row][tpm].as_str().ok_or("missing cell")?;
        let (gv, gu) = parse_rendered(got);
        let (wv, wu) = parse_rendered(want);
        // Compare in tenths to keep float noise out of the tolerance edge.
        let within = gu == wu && ((gv - wv).abs() * 10.0).round() <= (tol * 10.0).round();
        ensure!(within, "{tpm} row {row}: got {got:?}, reference {want:?} ±{tol}");
        cells.push(got.to_string());
    }
    Ok(format!("8/8 cells within tolerance: {}", cells.join(" | ")))
}

// ---------------------------------------------------------------------------

fn random_keys(rng: &mut impl RngCore) -> NvKeys {
    let identity = AppIdentity::new(vec(rng, 64), AppId::new(bytes(rng))).unwrap();
    derive_from_chip_secret(&ChipSecret::new(bytes(rng)), &DerivationConstant::new(bytes(rng)), &identity)
}

fn random_manifest(rng: &mut ChaCha20Rng) -> Manifest {
    let mut manifest = Manifest::new();
    let contexts = rng.gen_range(1..12);
    for _ in 0..contexts {
        let context = rng.gen_range(1..=u16::MAX);
        let versions = rng.gen_range(1..4u32);
        let records = manifest.entry(context).or_default();
        let base = records.len() as u32;
        for v in 0..versions {
            let field_count = rng.gen_range(0..=7);
            let mut fields: Vec<Vec<u8>> = (0..field_count)
                .map(|_| {
                    let len = rng.gen_range(0..200);
                    vec(rng, len)
                })
                .collect();
            // Trailing empty fields are indistinguishable from unused slots.
            while fields.last().is_some_and(Vec::is_empty) {
                fields.pop();
            }
            records.push((base + v + 1, fields));
        }
    }
    manifest
}

fn c2_nv_round_trip_and_tamper() -> Verdict {
    let mut rng = rng(2);
    let mut flips = 0;
    let mut entries_total = 0;
    for case in 0..100 {
        let keys = random_keys(&mut rng);
        let manifest = random_manifest(&mut rng);
        let mut plain = Vec::new();
        for (&context, records) in &manifest {
            for (sequence, fields) in records {
                plain.push(PlainEntry { context, sequence: *sequence, fields: fields.clone() });
            }
        }
        // Interleave contexts; the decoder regroups them.
        for i in (1..plain.len()).rev() {
            plain.swap(i, rng.gen_range(0..=i));
        }
        let active = rng.gen_range(1..u32::MAX);
        let older = SectionContents { sequence: active - 1, entries: Vec::new() };
        let newer = SectionContents { sequence: active, entries: plain };
        let sections = if rng.gen() { [older, newer] } else { [newer, older] };
        let image = encode_image(&sections, &keys).map_err(|e| format!("case {case}: {e}"))?;

        let parsed = parse_image(&image).map_err(|e| format!("case {case}: {e}"))?;
        let state = decrypt_image(&parsed, &keys).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(state.failed_entries() == 0, "case {case}: clean image has MAC failures");
        ensure!(state.section_macs.iter().all(|m| m.verified), "case {case}: section MAC failure");
        ensure!(state.active_section == active, "case {case}: wrong active section");
        let decoded: Manifest = state
            .contexts
            .iter()
            .map(|(&c, rs)| (c, rs.iter().map(|r| (r.sequence, r.fields.clone())).collect()))
            .collect();
        ensure!(decoded == manifest, "case {case}: decrypted state differs from manifest");
        entries_total += state.entry_count();

        // MAC-covered bytes of data entries: iv, mac and body.
        let active_section = parsed.sections.iter().find(|s| s.sequence == active).unwrap();
        let mut regions = Vec::new();
        for entry in active_section.entries.iter().filter(|e| e.context != SECTION_MAC_CONTEXT) {
            let base = active_section.index * SECTION_LEN + entry.offset;
            regions.push((entry.context, entry.sequence, base + 24, 16 + 32 + entry.ciphertext.len()));
        }
        let covered: usize = regions.iter().map(|r| r.3).sum();
        for _ in 0..20 {
            let mut pick = rng.gen_range(0..covered);
            let &(context, sequence, start, _) = regions
                .iter()
                .find(|r| {
                    if pick < r.3 {
                        true
                    } else {
                        pick -= r.3;
                        false
                    }
                })
                .unwrap();
            let at = start + pick;
            let mut tampered = image.clone();
            tampered[at] ^= 1 << rng.gen_range(0..8);
            let state = decrypt_image(&parse_image(&tampered).map_err(|e| e.to_string())?, &keys)
                .map_err(|e| e.to_string())?;
            let failed: Vec<(u16, u32, bool)> = state
                .contexts
                .iter()
                .flat_map(|(&c, rs)| rs.iter().filter(|r| !r.verified).map(move |r| (c, r.sequence, r.fields.is_empty())))
                .collect();
            ensure!(
                failed == [(context, sequence, true)],
                "case {case}: flip at {at:#x} in ({context}, {sequence}) gave failures {failed:?}"
            );
            flips += 1;
        }
    }
    Ok(format!(
        "100/100 manifests round-trip ({entries_total} entries); {flips}/{flips} flips -> exactly one failed entry, no plaintext"
    ))
}

// ---------------------------------------------------------------------------

fn c3_seed_sufficiency() -> Verdict {
    let mut rng = rng(3);
    for case in 0..100 {
        let secret = ChipSecret::new(bytes(&mut rng));
        let constant = DerivationConstant::new(bytes(&mut rng));
        let modulus_len = rng.gen_range(1..=512);
        let modulus = vec(&mut rng, modulus_len);
        let app_id: [u8; 16] = bytes(&mut rng);
        let identity = AppIdentity::new(modulus.clone(), AppId::new(app_id)).unwrap();

        let direct = derive_from_chip_secret(&secret, &constant, &identity);
        let composed = derive_nv_keys(&derive_seed(&secret, &constant), &identity);
        ensure!(direct == composed, "case {case}: composition mismatch");

        let mut app_flip = app_id;
        let bit = rng.gen_range(0..128);
        app_flip[bit / 8] ^= 1 << (bit % 8);
        let other = derive_from_chip_secret(&secret, &constant, &AppIdentity::new(modulus.clone(), AppId::new(app_flip)).unwrap());
        ensure!(
            other.storage != direct.storage && other.integrity != direct.integrity,
            "case {case}: app_id bit {bit} left a key unchanged"
        );

        let mut mod_flip = modulus.clone();
        let bit = rng.gen_range(0..mod_flip.len() * 8);
        mod_flip[bit / 8] ^= 1 << (bit % 8);
        let other = derive_from_chip_secret(&secret, &constant, &AppIdentity::new(mod_flip, AppId::new(app_id)).unwrap());
        ensure!(
            other.storage != direct.storage && other.integrity != direct.integrity,
            "case {case}: modulus bit {bit} left a key unchanged"
        );
    }
    Ok("100/100 compositions byte-exact; 100/100 app_id and 100/100 modulus flips change both keys".into())
}

// ---------------------------------------------------------------------------

fn c4_lsb_extraction() -> Verdict {
    let mut rng = rng(4);
    let mut max_ops = 0;
    for case in 0..100 {
        let planted: [u8; 16] = bytes(&mut rng);
        let slots = rng.gen_range(2..=DEFAULT_SLOTS * 2);
        let mut ccp = Ccp::new(LsbState::new(slots, planted).unwrap(), CcpMode::default());
        let extraction = extract_protected_slot(&mut ccp, 1, 0).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(extraction.bytes == planted, "case {case}: recovered {:02x?}", extraction.bytes);
        ensure!(extraction.op_count <= MAX_EXTRACTION_OPS, "case {case}: {} ops", extraction.op_count);
        max_ops = max_ops.max(extraction.op_count);
    }
    for case in 0..100 {
        let planted: [u8; 16] = bytes(&mut rng);
        let mut ccp = Ccp::new(
            LsbState::new(DEFAULT_SLOTS, planted).unwrap(),
            CcpMode::new(AlignmentPolicy::AlignedOnly),
        );
        let result = extract_protected_slot(&mut ccp, 1, 0);
        ensure!(
            result == Err(CcpError::ExtractionImpossible(CcpErrorKind::UnalignedKeysRejected)),
            "aligned case {case}: {result:?}"
        );
        ensure!(ccp.partial_key_disclosures() == 0, "aligned case {case}: protected bytes reached a job");
    }
    Ok(format!(
        "100/100 slots recovered (max {max_ops} ops <= {MAX_EXTRACTION_OPS}); aligned mode 100/100 ExtractionImpossible, 0 disclosures"
    ))
}

// ---------------------------------------------------------------------------

fn c5_policy_independent_unseal() -> Verdict {
    let mut rng = rng(5);
    for case in 0..100 {
        let parent = PrimarySeed::new(bytes(&mut rng));
        let policy = vec(&mut rng, 32);
        let auth_len = rng.gen_range(1..=64);
        let sensitive = TpmSensitive {
            auth_value: vec(&mut rng, auth_len),
            seed_value: bytes(&mut rng),
            sensitive_data: {
                let len = rng.gen_range(1..=128);
                vec(&mut rng, len)
            },
        };
        let public = TpmPublic::sealed_data(policy, vec(&mut rng, 32));
        let private = seal_object(&sensitive, &public, &parent, &Iv128::new(bytes(&mut rng))).unwrap();

        let opened = unseal_object(&public, &private, &parent).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(opened == sensitive, "case {case}: unsealed data differs");

        let mut wrong = *parent.as_bytes();
        let bit = rng.gen_range(0..256);
        wrong[bit / 8] ^= 1 << (bit % 8);
        let result = unseal_object(&public, &private, &PrimarySeed::new(wrong));
        ensure!(result == Err(TpmError::WrongSeedOrTampered), "case {case}: wrong seed gave {result:?}");
    }
    Ok("100/100 policy-bound objects unsealed without credentials; 100/100 wrong seeds rejected at the MAC".into())
}

// ---------------------------------------------------------------------------

fn c6_seed_window_search() -> Verdict {
    const LEN: usize = 64 * 1024;
    let mut rng = rng(6);
    let parent = PrimarySeed::new(bytes(&mut rng));
    let public = TpmPublic::sealed_data(vec(&mut rng, 32), vec(&mut rng, 32));
    let sensitive = TpmSensitive { auth_value: vec![], seed_value: bytes(&mut rng), sensitive_data: vec(&mut rng, 32) };
    let private = seal_object(&sensitive, &public, &parent, &Iv128::new(bytes(&mut rng))).unwrap();

    let offsets = [0, 31, 32, 1337, LEN - 32];
    for (i, &offset) in offsets.iter().enumerate() {
        let buf = plant_seed(600 + i as u64, LEN, &parent, offset);
        let found = find_primary_seed(&buf, &public, &private).map_err(|e| format!("offset {offset}: {e}"))?;
        ensure!(found.offset == offset, "planted at {offset}, found at {}", found.offset);
        ensure!(found.seed == parent, "offset {offset}: wrong seed bytes");
    }
    for i in 0..20 {
        let buf = vec(&mut rng, LEN);
        let result = find_primary_seed(&buf, &public, &private);
        ensure!(result == Err(TpmError::NotFound), "seedless buffer {i}: {result:?}");
    }
    Ok(format!("seeds found at exact offsets {offsets:?}; 20/20 seedless 64 KiB buffers -> NotFound"))
}

// ---------------------------------------------------------------------------

fn c7_tpm_only_pipeline() -> Verdict {
    let mut recovered = Vec::new();
    for mismatched_pcrs in [false, true] {
        let nv = nv_fixture(70).map_err(|e| e.to_string())?;
        // Only the chip secret and the flash image go in; the seed comes
        // from the decrypted state.
        let keys = derive_from_chip_secret(&nv.chip.secret, &nv.chip.constant, &nv.chip.identity);
        let state = decrypt_image(&parse_image(&nv.image).map_err(|e| e.to_string())?, &keys).map_err(|e| e.to_string())?;
        ensure!(state.failed_entries() == 0, "fixture image has MAC failures");
        let options = ProtectorOptions { mismatched_pcrs, ..Default::default() };
        let fixture = protector_fixture(71, &nv.primary_seed, &ProtectorKind::TpmOnly, &options).map_err(|e| e.to_string())?;
        let datum = fixture.metadata.require(DatumType::TpmEncoded).map_err(|e| e.to_string())?;
        let policy = ftpm_core::fde::split_tpm_encoded_datum(datum).map_err(|e| e.to_string())?.pcr_policy;
        ensure!(check_pcr_policy(&fixture.bank, &policy) != mismatched_pcrs, "fixture policy state unexpected");

        let vmk = extract_vmk_tpm_only(datum, &state.plaintext()).map_err(|e| format!("mismatched={mismatched_pcrs}: {e}"))?;
        ensure!(Some(vmk) == fixture.vmk, "mismatched={mismatched_pcrs}: recovered VMK differs from the planted one");
        recovered.push(vmk);
    }
    ensure!(recovered[0] == recovered[1], "PCR policy contents changed the recovered VMK");
    Ok(format!("planted VMK {}.. recovered with matching and mismatched PCR policies", &recovered[0].to_hex()[..16]))
}

// ---------------------------------------------------------------------------

fn c8_tpm_pin_path() -> Verdict {
    let mut notes = Vec::new();
    let mut failures = Vec::new();

    // Full-strength stretch on one core: best of three.
    let params = StretchParams::new([0x42; 16]);
    let best = (0..3)
        .map(|_| {
            let t = Instant::now();
            stretch_pin("271828", &params).unwrap();
            t.elapsed()
        })
        .min()
        .unwrap();
    let ms = best.as_secs_f64() * 1e3;
    // Reference: one SHA-256 stream over the same 2^21 blocks. The stretch
    // chain is strictly sequential, so this bounds it from below.
    let chunk = vec![0u8; 1 << 20];
    let t = Instant::now();
    let mut h = Sha256::new();
    for _ in 0..128 {
        h.update(&chunk);
    }
    std::hint::black_box(h.finalize());
    let floor_ms = t.elapsed().as_secs_f64() * 1e3;
    notes.push(format!(
        "2^20-round stretch {ms:.0} ms ({:.1}/s; plain SHA-256 over 2^21 blocks on this host {floor_ms:.0} ms)",
        1e3 / ms
    ));
    if best >= Duration::from_millis(100) {
        failures.push(format!("stretch took {ms:.0} ms, target < 100 ms"));
    }

    // Wrong PINs against a full-strength fixture.
    let nv = nv_fixture(80).map_err(|e| e.to_string())?;
    let plaintext = decrypt_image(&parse_image(&nv.image).unwrap(), &nv.chip.nv_keys()).unwrap().plaintext();
    let pin = "0042";
    let fixture = protector_fixture(81, &nv.primary_seed, &ProtectorKind::TpmPin { pin: pin.into() }, &ProtectorOptions::default())
        .map_err(|e| e.to_string())?;
    let mut rng = rng(8);
    let mut wrong_ok = 0;
    for _ in 0..100 {
        let guess = loop {
            let g = format!("{:04}", rng.gen_range(0..10_000));
            if g != pin {
                break g;
            }
        };
        match extract_vmk_tpm_pin(&fixture.metadata, &plaintext, &guess) {
            Err(FdeError::WrongPin) => wrong_ok += 1,
            other => failures.push(format!("pin {guess}: {other:?}")),
        }
    }
    notes.push(format!("{wrong_ok}/100 wrong pins -> WrongPin"));
    if extract_vmk_tpm_pin(&fixture.metadata, &plaintext, pin).ok() != fixture.vmk {
        failures.push("correct pin did not yield the planted VMK".into());
    }

    // Deterministic enumeration: attempts = index + 1, via the CLI at full
    // strength and via the library at reduced strength for random indices.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path().display().to_string();
    let expected = cli(&["fixtures", "--out", &d, "--seed", "88", "--pin", pin])?;
    let cracked = cli(&[
        "vmk", "--mode", "tpm-pin", "--metadata", &format!("{d}/tpm-pin.fvmd"),
        "--nv-plaintext", &format!("{d}/nv-plaintext.bin"), "--crack", "--charset", "digits", "--length", "4",
    ])?;
    if cracked["pin"] != pin || cracked["attempts"] != 43 || cracked["vmk"] != expected["expected"]["tpm_pin_vmk"] {
        failures.push(format!("vmk --crack returned {cracked}"));
    } else {
        notes.push(format!("vmk --crack found {pin} in 43 attempts"));
    }
    let reduced = ProtectorOptions { stretch_rounds: 64, ..Default::default() };
    for trial in 0..3u64 {
        let index = rng.gen_range(0..10_000u64);
        let planted = format!("{index:04}");
        let f = protector_fixture(90 + trial, &nv.primary_seed, &ProtectorKind::TpmPin { pin: planted.clone() }, &reduced)
            .map_err(|e| e.to_string())?;
        let outcome = brute_force_pin(&f.metadata, &plaintext, PinSpace::digits(4).unwrap(), 1).map_err(|e| e.to_string())?;
        if outcome.pin != planted || outcome.attempts != index + 1 || Some(outcome.vmk) != f.vmk {
            failures.push(format!("planted {planted}: got {} after {} attempts", outcome.pin, outcome.attempts));
        }
    }
    notes.push("3/3 random planted pins at attempts = index+1".into());

    if failures.is_empty() {
        Ok(notes.join("; "))
    } else {
        Err(format!("{}; [{}]", failures.join("; "), notes.join("; ")))
    }
}

// ---------------------------------------------------------------------------

fn c9_naive_collapse() -> Verdict {
    let nv = nv_fixture(90).map_err(|e| e.to_string())?;
    let plaintext = decrypt_image(&parse_image(&nv.image).unwrap(), &nv.chip.nv_keys()).unwrap().plaintext();
    let pin = "correct horse";
    let fixture = protector_fixture(91, &nv.primary_seed, &ProtectorKind::Naive { pin: Some(pin.into()) }, &Default::default())
        .map_err(|e| e.to_string())?;
    let secret = fixture.sealed_secret.ok_or("fixture lacks a sealed secret")?;

    let before = stretch_invocations();
    let passphrase = extract_key_naive(&fixture.metadata, &plaintext).map_err(|e| e.to_string())?;
    let stretches = stretch_invocations() - before;
    ensure!(stretches == 0, "{stretches} stretch invocations");
    use base64::Engine;
    ensure!(
        passphrase == base64::engine::general_purpose::STANDARD.encode(secret),
        "passphrase is not base64(sealed secret)"
    );

    let mitigated = fixture.mitigated_passphrase.clone().ok_or("no mitigated passphrase")?;
    ensure!(mitigated == format!("{passphrase}:{pin}"), "mitigated passphrase has the wrong shape");
    ensure!(mitigated != passphrase, "mitigation did not change the passphrase");
    // Without the PIN, the unsealed secret alone yields only the naive
    // passphrase; every other PIN gives a different one.
    for other in ["", "correct horsf", "0000"] {
        let got = mitigated_naive_key(&secret, other);
        ensure!(got.as_deref() != Ok(mitigated.as_str()), "pin {other:?} reproduced the mitigated passphrase");
    }
    ensure!(mitigated_naive_key(&secret, "") == Err(FdeError::InvalidPin), "empty pin accepted");
    Ok("PIN-guarded naive object -> base64 passphrase with 0 stretch invocations; mitigated variant needs the pin".into())
}

// ---------------------------------------------------------------------------

fn oracle_extend(register: &mut [u8; 32], value: &[u8]) {
    let mut h = Sha256::new();
    h.update(*register);
    h.update(value);
    *register = h.finalize().into();
}

fn c10_pcr_semantics() -> Verdict {
    let mut rng = rng(10);
    let mut bank = PcrBank::new();
    let mut oracle = [[0u8; 32]; PCR_COUNT];
    let mut resets = 0;
    for case in 0..10_000 {
        if rng.gen_ratio(1, 200) {
            bank.reset();
            oracle = [[0u8; 32]; PCR_COUNT];
            resets += 1;
        } else {
            let index = rng.gen_range(0..PCR_COUNT);
            let len = rng.gen_range(0..=64);
            let value = vec(&mut rng, len);
            bank.extend(index, &value).unwrap();
            oracle_extend(&mut oracle[index], &value);
        }
        let registers: Vec<[u8; 32]> = bank.registers().iter().map(|d| *d.as_bytes()).collect();
        ensure!(registers == oracle, "case {case}: bank diverged from the hash-chain oracle");
    }
    ensure!(bank.extend(PCR_COUNT, b"x") == Err(TpmError::BadPcrIndex(PCR_COUNT)), "out-of-range index accepted");

    for pair in 0..100 {
        let a = vec(&mut rng, 32);
        let b = vec(&mut rng, 32);
        let index = rng.gen_range(0..PCR_COUNT);
        let mut ab = PcrBank::new();
        ab.extend(index, &a).unwrap();
        ab.extend(index, &b).unwrap();
        let mut ba = PcrBank::new();
        ba.extend(index, &b).unwrap();
        ba.extend(index, &a).unwrap();
        ensure!(ab.get(index).unwrap() != ba.get(index).unwrap(), "pair {pair}: order did not matter");
        ensure!(*ab.get(index).unwrap() != Digest256::new([0; 32]), "pair {pair}: zero register");
    }
    Ok(format!("10000/10000 steps match the oracle ({resets} resets); 100/100 pairs order-sensitive"))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "brute-force table", c1_bruteforce_table, Duration::from_secs(1)),
        (2, "NV round trip + tamper", c2_nv_round_trip_and_tamper, Duration::from_secs(30)),
        (3, "key-derivation seed sufficiency", c3_seed_sufficiency, Duration::from_secs(5)),
        (4, "LSB extraction", c4_lsb_extraction, Duration::from_secs(30)),
        (5, "policy-independent unsealing", c5_policy_independent_unseal, Duration::from_secs(10)),
        (6, "seed window search", c6_seed_window_search, Duration::from_secs(60)),
        (7, "TPM-only pipeline", c7_tpm_only_pipeline, Duration::from_secs(10)),
        (8, "TPM+PIN path", c8_tpm_pin_path, Duration::MAX),
        (9, "naive protector collapse", c9_naive_collapse, Duration::MAX),
        (10, "PCR semantics", c10_pcr_semantics, Duration::MAX),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();

    let mut failed = 0;
    for (number, name, check, budget) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || *f == number.to_string()) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > budget => Err(format!("{detail}; runtime {elapsed:.2?} exceeds {budget:?}")),
            other => other,
        };
        let (tag, detail) = match outcome {
            Ok(detail) => ("PASS", detail),
            Err(detail) => {
                failed += 1;
                ("FAIL", detail)
            }
        };
        println!("[{tag}] criterion {number:>2} {name} ({elapsed:.2?}): {detail}");
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
