// SPDX-License-Identifier: Apache-2.0

//! Storage and integrity key derivation for the fTPM's NV state.
//!
//! The chain has five steps:
//!
//! 1. `seed = AES128-Decrypt(key = chip secret, ciphertext = constant)`
//! 2. two 256-bit values via the counter-mode KDF, labelled
//!    `"AES key for wrapping data"` and `"HMAC key for wrapping data"`
//! 3. each value keys an HMAC over `SHA256(signing modulus)`
//! 4. each result keys an HMAC over the 16-byte application id
//! 5. the AES value is truncated to 128 bits; the HMAC value is kept whole
//!
//! Only step 1 touches the chip secret, so the seed alone is enough to reach
//! the final keys.

use crate::crypto::{
    aes128_decrypt_block, fixed_bytes, hmac_sha256, kdf_ctr_sp800_108, sha256, Block128,
    CryptoError, MacKey256, SymKey128,
};

pub const STORAGE_LABEL: &[u8] = b"AES key for wrapping data";
pub const INTEGRITY_LABEL: &[u8] = b"HMAC key for wrapping data";

fixed_bytes!(
    /// The 128-bit per-CPU secret held at LSB address zero.
    ChipSecret,
    16
);
fixed_bytes!(
    /// Output of the first derivation step; leaking it is as good as the secret.
    DerivationSeed,
    16
);
fixed_bytes!(
    /// The constant ciphertext decrypted under the chip secret.
    DerivationConstant,
    16
);
fixed_bytes!(
    /// Identifier the fTPM application runs under.
    AppId,
    16
);

/// Identity of the fTPM application that is mixed into both keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppIdentity {
    signing_modulus: Vec<u8>,
    app_id: AppId,
}

impl AppIdentity {
    /// `signing_modulus` is the big-endian RSA modulus of the application's
    /// signing key and must not be empty.
    pub fn new(signing_modulus: Vec<u8>, app_id: AppId) -> Result<Self, CryptoError> {
        if signing_modulus.is_empty() {
            return Err(CryptoError::InvalidLength(
                "signing modulus must not be empty".into(),
            ));
        }
        Ok(Self {
            signing_modulus,
            app_id,
        })
    }

    pub fn signing_modulus(&self) -> &[u8] {
        &self.signing_modulus
    }

    pub fn app_id(&self) -> &AppId {
        &self.app_id
    }
}

/// The derived NV storage (AES-128-CTR) and integrity (HMAC-SHA256) keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NvKeys {
    pub storage: SymKey128,
    pub integrity: MacKey256,
}

pub fn derive_seed(secret: &ChipSecret, constant: &DerivationConstant) -> DerivationSeed {
    let key = SymKey128::new(*secret.as_bytes());
    let out = aes128_decrypt_block(&key, &Block128::new(*constant.as_bytes()));
    DerivationSeed::new(*out.as_bytes())
}

/// Steps 3 and 4 for one branch: chain the running value as the HMAC key.
fn mix_identity(value: &[u8], modulus_digest: &[u8], app_id: &AppId) -> [u8; 32] {
    let with_signer = hmac_sha256(value, modulus_digest).expect("32-byte KDF output");
    let with_app = hmac_sha256(with_signer.as_bytes(), app_id.as_bytes()).expect("32-byte key");
    *with_app.as_bytes()
}

pub fn derive_nv_keys(seed: &DerivationSeed, identity: &AppIdentity) -> NvKeys {
    let kdf = |label: &[u8]| {
        kdf_ctr_sp800_108(seed.as_bytes(), label, b"", 256).expect("fixed 256-bit request")
    };
    let aes_value = kdf(STORAGE_LABEL);
    let hmac_value = kdf(INTEGRITY_LABEL);

    let modulus_digest = sha256(&identity.signing_modulus);
    let aes_value = mix_identity(&aes_value, modulus_digest.as_bytes(), &identity.app_id);
    let hmac_value = mix_identity(&hmac_value, modulus_digest.as_bytes(), &identity.app_id);

    let mut storage = [0u8; 16];
    storage.copy_from_slice(&aes_value[..16]);
    NvKeys {
        storage: SymKey128::new(storage),
        integrity: MacKey256::new(hmac_value),
    }
}

pub fn derive_from_chip_secret(
    secret: &ChipSecret,
    constant: &DerivationConstant,
    identity: &AppIdentity,
) -> NvKeys {
    derive_nv_keys(&derive_seed(secret, constant), identity)
}
