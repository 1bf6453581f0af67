// SPDX-License-Identifier: Apache-2.0

pub mod ccp;
pub mod crypto;
pub mod keys;
pub mod nv;
pub mod tpm;
pub mod fde;
pub mod fixtures;
