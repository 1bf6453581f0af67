// SPDX-License-Identifier: Apache-2.0

use std::fmt;

use ftpm_core::ccp::CcpError;
use ftpm_core::crypto::CryptoError;
use ftpm_core::fde::FdeError;
use ftpm_core::nv::NvError;
use ftpm_core::tpm::TpmError;

/// Every error ends the process with exit code 1 (domain) or 2 (usage).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn failure(msg: impl Into<String>) -> Self {
        CliError::Failure(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Failure(_) => 1,
            CliError::Usage(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Failure(msg) => f.write_str(msg),
        }
    }
}

impl From<CryptoError> for CliError {
    fn from(e: CryptoError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<NvError> for CliError {
    fn from(e: NvError) -> Self {
        match e {
            NvError::IntegrityError { .. } => CliError::Failure(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<TpmError> for CliError {
    fn from(e: TpmError) -> Self {
        match e {
            TpmError::NotFound | TpmError::WrongSeedOrTampered => CliError::Failure(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<FdeError> for CliError {
    fn from(e: FdeError) -> Self {
        match e {
            FdeError::SeedNotFound | FdeError::UnsealFailed(_) | FdeError::WrongPin | FdeError::Exhausted { .. } => {
                CliError::Failure(e.to_string())
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<CcpError> for CliError {
    fn from(e: CcpError) -> Self {
        match e {
            CcpError::ExtractionImpossible(_) | CcpError::ExtractionFailed { .. } => {
                CliError::Failure(format!("{e:?}: {e}"))
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}
