//! Experiment designs and pilot-calibrated bounds for the acceptance suite.
//!
//! The bounds were fixed from runs of `examples/calibrate.rs` under
//! [`PILOT_SEED`], which the suite never uses. Re-running the example
//! reproduces the pilot numbers quoted below exactly.

/// Master seed of the pilot runs.
pub const PILOT_SEED: u64 = 0x005E_ED0F_F170;
/// Master seed of the acceptance suite.
pub const ACCEPTANCE_SEED: u64 = 7;

/// Ultrametricity design: paradigmatic model at twice its critical
/// temperature.
pub mod ultrametric {
    pub const SIZES: [u32; 3] = [12, 18, 24];
    pub const BATCHES: u64 = 10;
    pub const REPLICAS: usize = 100;
    pub const TRIPLES: usize = 10_000;
    pub const MIN_DECREASING_BATCHES: usize = 8;
    /// Pooled violation fraction at N = 24 must stay below this. Pilot batch
    /// fractions at N = 24 were 0, 3.0e-5 and 0 (N = 18: 3.0e-4, 1.1e-4,
    /// 9.8e-4); the bound is about three times the largest.
    pub const FINAL_BOUND: f64 = 1e-4;
}

/// Limit-law design: REM at twice its critical temperature.
pub mod limit_law {
    pub const SIZES: [u32; 3] = [12, 16, 20];
    pub const SEED_PAIRS: u64 = 10;
    pub const REPLICAS_PER_PAIR: usize = 1_500;
    pub const REFERENCE_SAMPLES: usize = 100_000;
    /// Majority of seed pairs.
    pub const MIN_DECREASING_PAIRS: usize = 6;
    pub const PD_FLOOR: f64 = 1e-9;
    /// Allowed `|E Σw² − E_PD Σw²|` per size. Pilot differences over 1000
    /// replicas against 2000 PD samples were 0.0582, 0.0429 and 0.0340
    /// with joint standard errors 0.0107, 0.0109 and 0.0111; each band is
    /// the difference plus three standard errors, rounded up.
    pub const SUM_W2_BAND: [f64; 3] = [0.091, 0.076, 0.068];
}

/// Structure probe design: window `[−2, 2]` around `a_N`, target mark `{1}`.
pub mod probe {
    pub const SIZES: [u32; 3] = [8, 12, 16];
    pub const REPLICAS: usize = 2_000;
    pub const WINDOW: (f64, f64) = (-2.0, 2.0);
    /// "Non-decreasing within 2 SE": `p_next ≥ p_prev − 2 sqrt(se_prev² + se_next²)`.
    pub const SE_SLACK: f64 = 2.0;
}

/// Poisson window counts: REM, N = 20, window `[0, ∞)`.
pub mod poisson {
    pub const N: u32 = 20;
    pub const REPLICAS: usize = 2_000;
}

/// `p_next ≥ p_prev − slack · sqrt(se_prev² + se_next²)` at every step.
pub fn non_decreasing_within(points: &[(f64, f64)], slack: f64) -> bool {
    points.windows(2).all(|w| w[1].0 >= w[0].0 - slack * (w[0].1 * w[0].1 + w[1].1 * w[1].1).sqrt())
}

/// Every step strictly smaller than the last.
pub fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}
