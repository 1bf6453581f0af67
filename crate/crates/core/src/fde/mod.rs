// SPDX-License-Identifier: Apache-2.0

//! Full-disk-encryption key protectors built on sealed TPM objects.

mod estimate;
mod metadata;
mod protector;
mod stretch;

pub use estimate::*;
pub use metadata::*;
pub use protector::*;
pub use stretch::*;

use thiserror::Error;

use crate::tpm::TpmError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FdeError {
    #[error("format error: {0}")]
    FormatError(String),
    #[error("volume metadata has no {0:?} datum")]
    MissingDatum(DatumType),
    #[error("primary seed not found in the NV plaintext")]
    SeedNotFound,
    #[error("unsealing failed: {0}")]
    UnsealFailed(TpmError),
    #[error("wrong PIN")]
    WrongPin,
    #[error("candidate space exhausted after {attempts} attempts")]
    Exhausted { attempts: u64 },
    #[error("PIN must not be empty")]
    InvalidPin,
    #[error("invalid guess rate {0}")]
    InvalidRate(f64),
}

impl From<TpmError> for FdeError {
    fn from(e: TpmError) -> Self {
        match e {
            TpmError::NotFound => FdeError::SeedNotFound,
            TpmError::FormatError(msg) => FdeError::FormatError(msg),
            other => FdeError::UnsealFailed(other),
        }
    }
}
