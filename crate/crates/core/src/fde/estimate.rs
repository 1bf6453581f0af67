// SPDX-License-Identifier: Apache-2.0

//! Exhaustive-search time estimates for PIN/password protectors.
//!
//! Times are full-keyspace: `2^bits / rate`. Rendering picks the largest
//! unit that keeps the value at or above one (sec, min, hr, days, mo, yr),
//! with months of 365.25/12 days and years of 365.25 days. Values below ten
//! show one decimal, truncated; larger values are rounded to an integer.
//! From 1000 years upward the value is written as `m·10^e yr`.

use super::FdeError;

const MINUTE: f64 = 60.0;
const HOUR: f64 = 3_600.0;
const DAY: f64 = 86_400.0;
const YEAR: f64 = 365.25 * DAY;
const MONTH: f64 = YEAR / 12.0;

/// Offline guessing against a firmware TPM once its state is decrypted.
pub const FTPM_RATE: GuessRate = GuessRate(1_000.0);
/// Online guessing against a discrete TPM under dictionary-attack lockout.
pub const DTPM_RATE: GuessRate = GuessRate(1.0 / 600.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuessRate(f64);

impl GuessRate {
    pub fn per_second(rate: f64) -> Result<Self, FdeError> {
        if rate.is_finite() && rate > 0.0 {
            Ok(Self(rate))
        } else {
            Err(FdeError::InvalidRate(rate))
        }
    }

    pub fn one_every(seconds: f64) -> Result<Self, FdeError> {
        Self::per_second(1.0 / seconds)
    }

    pub fn guesses_per_second(self) -> f64 {
        self.0
    }
}

/// Min-entropy of common credential shapes, in bits.
pub const ENTROPY_ROWS: [(&str, u32); 4] = [
    ("4 digits", 9),
    ("10 digits", 15),
    ("10 characters", 21),
    ("20 characters", 36),
];

pub fn estimate_bruteforce_time(entropy_bits: u32, rate: GuessRate) -> f64 {
    2f64.powi(entropy_bits as i32) / rate.0
}

fn format_value(v: f64) -> String {
    if v < 10.0 {
        // Truncate to tenths; the small epsilon absorbs representation error
        // in values like 0.3 * 10.
        format!("{:.1}", ((v * 10.0) + 1e-9).floor() / 10.0)
    } else {
        format!("{}", v.round())
    }
}

pub fn render_duration(seconds: f64) -> String {
    let (value, unit) = if seconds < MINUTE {
        (seconds, "sec")
    } else if seconds < HOUR {
        (seconds / MINUTE, "min")
    } else if seconds < DAY {
        (seconds / HOUR, "hr")
    } else if seconds < MONTH {
        (seconds / DAY, "days")
    } else if seconds < YEAR {
        (seconds / MONTH, "mo")
    } else {
        let years = seconds / YEAR;
        if years >= 1_000.0 {
            let exponent = years.log10().floor();
            let mantissa = ((years / 10f64.powf(exponent)) * 10.0 + 1e-9).floor() / 10.0;
            return format!("{mantissa:.1}·10^{exponent} yr");
        }
        (years, "yr")
    };
    format!("{} {unit}", format_value(value))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub description: &'static str,
    pub entropy_bits: u32,
    pub ftpm_seconds: f64,
    pub dtpm_seconds: f64,
}

impl EstimateRow {
    pub fn ftpm(&self) -> String {
        render_duration(self.ftpm_seconds)
    }

    pub fn dtpm(&self) -> String {
        render_duration(self.dtpm_seconds)
    }
}

pub fn estimate_table() -> Vec<EstimateRow> {
    ENTROPY_ROWS
        .iter()
        .map(|&(description, entropy_bits)| EstimateRow {
            description,
            entropy_bits,
            ftpm_seconds: estimate_bruteforce_time(entropy_bits, FTPM_RATE),
            dtpm_seconds: estimate_bruteforce_time(entropy_bits, DTPM_RATE),
        })
        .collect()
}
