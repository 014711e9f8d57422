//! Sub-seed derivation. Every command takes one master seed; purpose-specific
//! streams are derived by fixed offsets so fitting, sampling, metrics, and
//! splits stay independent and reproducible.

pub const FIT_OFFSET: u64 = 0;
pub const SAMPLE_OFFSET: u64 = 1;
pub const METRICS_OFFSET: u64 = 2;
pub const SPLIT_OFFSET: u64 = 3;

pub fn derive(master: u64, offset: u64) -> u64 {
    master.wrapping_add(offset)
}

pub fn fit_seed(master: u64) -> u64 {
    derive(master, FIT_OFFSET)
}

pub fn sample_seed(master: u64) -> u64 {
    derive(master, SAMPLE_OFFSET)
}

pub fn metrics_seed(master: u64) -> u64 {
    derive(master, METRICS_OFFSET)
}

pub fn split_seed(master: u64) -> u64 {
    derive(master, SPLIT_OFFSET)
}
