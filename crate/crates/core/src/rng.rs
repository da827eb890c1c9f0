//! Counter-based random numbers.
//!
//! Every random quantity in the crate is a pure function of
//! `(seed, stream, counter)`: the 64-bit seed is the Philox key, the stream
//! id fills the upper counter words and the draw index the lower ones. Draw
//! `k` of stream `s` never depends on how many other draws were made or on
//! which thread made them.

use rand_core::RngCore;

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

/// Stream tags keeping the different consumers of one seed apart.
pub mod domain {
    pub const FIELD: u64 = 1 << 32;
    pub const GIBBS_DRAWS: u64 = 2 << 32;
    pub const CASCADE: u64 = 3 << 32;
    pub const CONSTANTS: u64 = 4 << 32;
    pub const PD: u64 = 5 << 32;
    pub const BRIDGE: u64 = 6 << 32;
    pub const PERMUTATION: u64 = 7 << 32;
    pub const SYNTHETIC: u64 = 8 << 32;
}

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = a as u64 * b as u64;
    ((p >> 32) as u32, p as u32)
}

/// The Philox4x32 bijection with 10 rounds.
#[inline]
pub fn philox4x32(ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let [mut c0, mut c1, mut c2, mut c3] = ctr;
    let [mut k0, mut k1] = key;
    for _ in 0..10 {
        let (hi0, lo0) = mulhilo(PHILOX_M0, c0);
        let (hi1, lo1) = mulhilo(PHILOX_M1, c2);
        (c0, c1, c2, c3) = (hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0);
        k0 = k0.wrapping_add(PHILOX_W0);
        k1 = k1.wrapping_add(PHILOX_W1);
    }
    [c0, c1, c2, c3]
}

#[inline]
fn block(seed: u64, stream: u64, index: u64) -> [u32; 4] {
    philox4x32(
        [index as u32, (index >> 32) as u32, stream as u32, (stream >> 32) as u32],
        [seed as u32, (seed >> 32) as u32],
    )
}

/// Maps 64 random bits to the open interval `(0, 1)`.
#[inline]
pub fn bits_to_open01(u: u64) -> f64 {
    ((u >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Uniform draw `index` of `stream`, in `(0, 1)`.
#[inline]
pub fn uniform_at(seed: u64, stream: u64, index: u64) -> f64 {
    let b = block(seed, stream, index);
    bits_to_open01(b[0] as u64 | (b[1] as u64) << 32)
}

/// Standard Gaussian draw `index` of `stream`, by inverse CDF.
#[inline]
pub fn gaussian_at(seed: u64, stream: u64, index: u64) -> f64 {
    inverse_normal_cdf(uniform_at(seed, stream, index))
}

/// SplitMix64 finalizer; derives independent child seeds.
pub fn split_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sequential view of one stream, usable wherever `rand` wants an RNG.
#[derive(Debug, Clone)]
pub struct CounterRng {
    seed: u64,
    stream: u64,
    next_block: u64,
    buf: [u32; 4],
    used: usize,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        CounterRng { seed, stream, next_block: 0, buf: [0; 4], used: 4 }
    }

    pub fn uniform(&mut self) -> f64 {
        bits_to_open01(self.next_u64())
    }

    pub fn gaussian(&mut self) -> f64 {
        inverse_normal_cdf(self.uniform())
    }

    /// Exp(1) variate.
    pub fn exponential(&mut self) -> f64 {
        -libm::log(self.uniform())
    }
}

impl RngCore for CounterRng {
    fn next_u32(&mut self) -> u32 {
        if self.used == 4 {
            self.buf = block(self.seed, self.stream, self.next_block);
            self.next_block += 1;
            self.used = 0;
        }
        let v = self.buf[self.used];
        self.used += 1;
        v
    }

    fn next_u64(&mut self) -> u64 {
        let lo = self.next_u32() as u64;
        let hi = self.next_u32() as u64;
        lo | hi << 32
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        rand_core::impls::fill_bytes_via_next(self, dst)
    }
}

/// `Φ⁻¹(p)` by Wichura's PPND16 (relative accuracy about 1e-16).
// Coefficients as published.
#[allow(clippy::excessive_precision)]
pub fn inverse_normal_cdf(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_608_0,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083_0e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061_0e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561_0e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_90,
        5.769_497_221_460_691_405_50,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        2.417_807_251_774_506_117_70e-1,
        2.272_384_498_926_918_458_33e-2,
        7.745_450_142_783_414_076_40e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_40,
        6.897_673_349_851_000_045_50e-1,
        1.481_039_764_274_800_745_90e-1,
        1.519_866_656_361_645_719_66e-2,
        5.475_938_084_995_344_946_00e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_20,
        5.463_784_911_164_114_369_90,
        1.784_826_539_917_291_335_80,
        2.965_605_718_285_048_912_30e-1,
        2.653_218_952_657_612_309_30e-2,
        1.242_660_947_388_078_438_60e-3,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879_376_90e-1,
        1.369_298_809_227_358_053_10e-1,
        1.487_536_129_085_061_485_25e-2,
        7.868_691_311_456_132_591_00e-4,
        1.846_318_317_510_054_681_80e-5,
        1.421_511_758_316_445_888_70e-7,
        2.044_263_103_389_939_785_64e-15,
    ];

    fn poly(c: &[f64; 8], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
    }

    if !(p > 0.0 && p < 1.0) {
        return match p {
            0.0 => f64::NEG_INFINITY,
            1.0 => f64::INFINITY,
            _ => f64::NAN,
        };
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let mut r = libm::sqrt(-libm::log(r));
    let val = if r <= 5.0 {
        r -= 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        r -= 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// `Φ(x)`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::seq::SliceRandom;

    #[test]
    fn philox_known_answers() {
        assert_eq!(philox4x32([0; 4], [0; 2]), [0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8]);
        assert_eq!(philox4x32([u32::MAX; 4], [u32::MAX; 2]), [0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd]);
        assert_eq!(
            philox4x32([0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344], [0xa4093822, 0x299f31d0]),
            [0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1]
        );
    }

    #[test]
    fn inverse_normal_matches_reference_points() {
        assert_eq!(inverse_normal_cdf(0.5), 0.0);
        assert_relative_eq!(inverse_normal_cdf(0.975), 1.959_963_984_540_054, max_relative = 1e-15);
        assert_relative_eq!(inverse_normal_cdf(0.025), -1.959_963_984_540_054, max_relative = 1e-15);
        assert_relative_eq!(inverse_normal_cdf(1e-10), -6.361_340_902_404_056, max_relative = 1e-14);
        assert_eq!(inverse_normal_cdf(0.0), f64::NEG_INFINITY);
        for k in 1..1000 {
            let p = k as f64 / 1000.0;
            assert_relative_eq!(normal_cdf(inverse_normal_cdf(p)), p, max_relative = 1e-13);
        }
    }

    #[test]
    fn streams_are_random_access() {
        let mut rng = CounterRng::new(42, 7);
        let seq: Vec<f64> = (0..6).map(|_| rng.uniform()).collect();
        // Two u64 draws per Philox block.
        assert_eq!(seq[0], uniform_at(42, 7, 0));
        assert_eq!(seq[2], uniform_at(42, 7, 1));
        assert_ne!(uniform_at(42, 7, 0), uniform_at(42, 8, 0));
        assert_ne!(uniform_at(42, 7, 0), uniform_at(43, 7, 0));
        assert!(seq.iter().all(|&u| u > 0.0 && u < 1.0));
    }

    #[test]
    fn gaussian_moments() {
        let n = 200_000u64;
        let (mut s1, mut s2) = (0.0, 0.0);
        for k in 0..n {
            let z = gaussian_at(1, domain::SYNTHETIC, k);
            s1 += z;
            s2 += z * z;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn works_as_rand_rng() {
        let mut v: Vec<u32> = (0..20).collect();
        v.shuffle(&mut CounterRng::new(3, 0));
        let mut w: Vec<u32> = (0..20).collect();
        w.shuffle(&mut CounterRng::new(3, 0));
        assert_eq!(v, w);
        let mut sorted = v.clone();
        sorted.sort();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());
    }
}
