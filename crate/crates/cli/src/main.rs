// SPDX-License-Identifier: Apache-2.0

//! `ftpm-tool`: offline analysis of firmware TPM state.
//!
//! The hardware half of the attack (flash dump, chip-secret extraction) is
//! out of scope. The tool starts from its data products: a 128 KiB NV image
//! and the chip secret, or the seed derived from it, as hex.
//!
//! Exit codes: 0 success, 1 domain failure (seed not found, wrong PIN, MAC
//! failures), 2 usage or input-format error.

mod commands;
mod error;
mod hexio;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "ftpm-tool", version, about = "Firmware TPM NV decryption, unsealing and FDE key recovery")]
struct Cli {
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Diagnostics on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

/// Where the NV keys come from. Hex is lowercase, unprefixed and of exact
/// length.
#[derive(Debug, Clone, Args)]
pub struct KeyArgs {
    /// JSON file with secret, constant, modulus and app_id (as written by
    /// `fixtures`).
    #[arg(long, value_name = "FILE", conflicts_with_all = ["secret", "seed", "constant", "modulus", "app_id"])]
    pub chip: Option<PathBuf>,
    /// 16-byte chip-unique secret.
    #[arg(long, value_name = "HEX", conflicts_with = "seed")]
    pub secret: Option<String>,
    /// 16-byte derivation seed (the decrypted constant), instead of --secret.
    #[arg(long, value_name = "HEX", conflicts_with = "constant")]
    pub seed: Option<String>,
    /// 16-byte derivation constant; required with --secret.
    #[arg(long, value_name = "HEX")]
    pub constant: Option<String>,
    /// Signing-key modulus of the fTPM application, big-endian.
    #[arg(long, value_name = "HEX")]
    pub modulus: Option<String>,
    /// 16-byte application identifier.
    #[arg(long = "app-id", value_name = "HEX")]
    pub app_id: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ObjectArgs {
    /// TPM2B_PUBLIC file.
    #[arg(long, value_name = "FILE", requires = "private", conflicts_with = "blob")]
    pub public: Option<PathBuf>,
    /// TPM2B_PRIVATE file.
    #[arg(long, value_name = "FILE", requires = "public", conflicts_with = "blob")]
    pub private: Option<PathBuf>,
    /// TPM2B_PRIVATE followed by TPM2B_PUBLIC, optionally followed by a
    /// PCR policy (a TPM-encoded datum payload).
    #[arg(long, value_name = "FILE")]
    pub blob: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VmkMode {
    TpmOnly,
    TpmPin,
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LsbMode {
    Unaligned,
    Aligned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TpmKind {
    Ftpm,
    Dtpm,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Derive the NV storage and integrity keys.
    DeriveKeys {
        #[command(flatten)]
        keys: KeyArgs,
    },
    /// Verify and decrypt the active section of an NV image.
    NvDecrypt {
        #[arg(long, value_name = "FILE")]
        image: PathBuf,
        #[command(flatten)]
        keys: KeyArgs,
        /// Write the concatenated verified fields (the seed-search buffer).
        #[arg(long, value_name = "FILE")]
        plaintext_out: Option<PathBuf>,
    },
    /// Build an NV image from a JSON manifest (same shape as nv-decrypt
    /// --json output).
    NvForge {
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        #[command(flatten)]
        keys: KeyArgs,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Unseal a sealed object without its auth value or policy.
    Unseal {
        #[command(flatten)]
        object: ObjectArgs,
        /// Decrypted NV plaintext to search for the parent seed.
        #[arg(long, value_name = "FILE", required_unless_present = "seed", conflicts_with = "seed")]
        nv_plaintext: Option<PathBuf>,
        /// 32-byte parent seed, skipping the search.
        #[arg(long, value_name = "HEX")]
        seed: Option<String>,
    },
    /// Locate the parent seed of a sealed object in NV plaintext.
    FindSeed {
        #[command(flatten)]
        object: ObjectArgs,
        #[arg(long, value_name = "FILE")]
        nv_plaintext: PathBuf,
    },
    /// Recover a volume master key or passphrase from volume metadata.
    Vmk {
        #[arg(long, value_enum)]
        mode: VmkMode,
        #[arg(long, value_name = "FILE")]
        metadata: PathBuf,
        #[arg(long, value_name = "FILE")]
        nv_plaintext: PathBuf,
        #[arg(long, conflicts_with = "crack")]
        pin: Option<String>,
        /// Brute-force the PIN (tpm-pin mode).
        #[arg(long)]
        crack: bool,
        /// digits, lower or alnum.
        #[arg(long, default_value = "digits", requires = "crack")]
        charset: String,
        #[arg(long, default_value_t = 4, requires = "crack")]
        length: usize,
        /// Worker threads for --crack.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Simulate recovering a read-protected key slot through a writable
    /// neighbour.
    LsbDemo {
        #[arg(long, default_value_t = ftpm_core::ccp::DEFAULT_SLOTS)]
        slots: usize,
        #[arg(long, value_enum, default_value_t = LsbMode::Unaligned)]
        mode: LsbMode,
        /// 16-byte content of the protected slot.
        #[arg(long, value_name = "HEX")]
        seed_slot: Option<String>,
    },
    /// Exhaustive-search time estimates.
    Estimate {
        #[arg(long, conflicts_with = "entropy", required_unless_present = "entropy")]
        table: bool,
        #[arg(long, value_name = "BITS")]
        entropy: Option<u32>,
        #[arg(long, value_enum, default_value_t = TpmKind::Ftpm)]
        tpm: TpmKind,
    },
    /// Write a deterministic fixture set: chip secret, NV image and volume
    /// metadata for every protector type.
    Fixtures {
        #[arg(long, value_name = "DIR", env = "FTPM_FORGE_FIXTURES")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// PIN for the TPM+PIN and PIN-guarded naive protectors.
        #[arg(long, default_value = "0042")]
        pin: String,
        #[arg(long, default_value_t = ftpm_core::fde::DEFAULT_STRETCH_ROUNDS)]
        stretch_rounds: u32,
        /// Bind objects to PCR values that do not match the fixture bank.
        #[arg(long)]
        mismatched_pcrs: bool,
    },
}

pub struct Output {
    pub json: bool,
    pub verbose: bool,
}

impl Output {
    pub fn note(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    pub fn emit(&self, value: &serde_json::Value, human: impl FnOnce() -> String) {
        let text = if self.json {
            serde_json::to_string_pretty(value).expect("serializable") + "\n"
        } else {
            human()
        };
        // A closed pipe (`| head`) is not an error worth a panic.
        let mut stdout = std::io::stdout().lock();
        let _ = stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let out = Output {
        json: cli.json,
        verbose: cli.verbose,
    };
    match cli.command {
        Command::DeriveKeys { keys } => commands::derive_keys(&out, &keys),
        Command::NvDecrypt { image, keys, plaintext_out } => {
            commands::nv_decrypt(&out, &image, &keys, plaintext_out.as_deref())
        }
        Command::NvForge { manifest, keys, out: path } => commands::nv_forge(&out, &manifest, &keys, &path),
        Command::Unseal { object, nv_plaintext, seed } => {
            commands::unseal(&out, &object, nv_plaintext.as_deref(), seed.as_deref())
        }
        Command::FindSeed { object, nv_plaintext } => commands::find_seed(&out, &object, &nv_plaintext),
        Command::Vmk {
            mode,
            metadata,
            nv_plaintext,
            pin,
            crack,
            charset,
            length,
            jobs,
        } => {
            let crack = crack.then_some(commands::CrackArgs { charset, length, jobs });
            commands::vmk(&out, mode, &metadata, &nv_plaintext, pin.as_deref(), crack)
        }
        Command::LsbDemo { slots, mode, seed_slot } => commands::lsb_demo(&out, slots, mode, seed_slot.as_deref()),
        Command::Estimate { table, entropy, tpm } => commands::estimate(&out, table, entropy, tpm),
        Command::Fixtures {
            out: dir,
            seed,
            pin,
            stretch_rounds,
            mismatched_pcrs,
        } => commands::fixtures(&out, &dir, seed, &pin, stretch_rounds, mismatched_pcrs),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ftpm-tool: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
