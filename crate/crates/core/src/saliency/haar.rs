//! Orthonormal 2D Haar wavelet decomposition.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::SaliencyError;

/// Wavelet choice for saliency scoring. Family is fixed to Haar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WaveletSpec {
    /// Number of dyadic decomposition levels, >= 1.
    pub levels: u32,
}

impl Default for WaveletSpec {
    fn default() -> Self {
        WaveletSpec { levels: 1 }
    }
}

impl WaveletSpec {
    pub fn validate(&self, patch_size: usize) -> Result<(), SaliencyError> {
        if self.levels == 0 {
            return Err(SaliencyError::InvalidParams { detail: format!("levels must be >= 1") });
        }
        let div = 1usize << self.levels;
        if patch_size % div != 0 {
            return Err(SaliencyError::InvalidParams {
                detail: format!("2^levels = {div} must divide patch side {patch_size}"),
            });
        }
        Ok(())
    }
}

/// Single-level subbands, each `s/2 x s/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct HaarSubbands {
    pub ll: Vec<f64>,
    pub lh: Vec<f64>,
    pub hl: Vec<f64>,
    pub hh: Vec<f64>,
    pub half: usize,
}

/// One level of the orthonormal 2D Haar transform of an `s x s` tile.
///
/// On each 2x2 block `[a b; c d]`:
/// `ll = (a+b+c+d)/2`, `lh = (a-b+c-d)/2` (horizontal detail),
/// `hl = (a+b-c-d)/2` (vertical detail), `hh = (a-b-c+d)/2`.
/// The basis is orthonormal, so energy is preserved exactly and a
/// constant tile `x = c` maps to `ll = 2c` with zero details.
pub fn haar_dwt2(tile: &[f64], s: usize) -> Result<HaarSubbands, SaliencyError> {
    if s % 2 != 0 || s == 0 {
        return Err(SaliencyError::OddSide { side: s });
    }
    if tile.len() != s * s {
        return Err(SaliencyError::InvalidParams {
            detail: format!("tile length {} does not match side {s}", tile.len()),
        });
    }
    let half = s / 2;
    let mut ll = vec![0.0; half * half];
    let mut lh = vec![0.0; half * half];
    let mut hl = vec![0.0; half * half];
    let mut hh = vec![0.0; half * half];
    for i in 0..half {
        for j in 0..half {
            let a = tile[(2 * i) * s + 2 * j];
            let b = tile[(2 * i) * s + 2 * j + 1];
            let c = tile[(2 * i + 1) * s + 2 * j];
            let d = tile[(2 * i + 1) * s + 2 * j + 1];
            ll[i * half + j] = (a + b + c + d) / 2.0;
            lh[i * half + j] = (a - b + c - d) / 2.0;
            hl[i * half + j] = (a + b - c - d) / 2.0;
            hh[i * half + j] = (a - b - c + d) / 2.0;
        }
    }
    Ok(HaarSubbands { ll, lh, hl, hh, half })
}

/// Inverse of [`haar_dwt2`].
pub fn haar_idwt2(sub: &HaarSubbands) -> Vec<f64> {
    let half = sub.half;
    let s = half * 2;
    let mut tile = vec![0.0; s * s];
    for i in 0..half {
        for j in 0..half {
            let k = i * half + j;
            let (ll, lh, hl, hh) = (sub.ll[k], sub.lh[k], sub.hl[k], sub.hh[k]);
            tile[(2 * i) * s + 2 * j] = (ll + lh + hl + hh) / 2.0;
            tile[(2 * i) * s + 2 * j + 1] = (ll - lh + hl - hh) / 2.0;
            tile[(2 * i + 1) * s + 2 * j] = (ll + lh - hl - hh) / 2.0;
            tile[(2 * i + 1) * s + 2 * j + 1] = (ll - lh - hl + hh) / 2.0;
        }
    }
    tile
}

/// Patch significance from the wavelet route: Euclidean norm of all
/// detail coefficients (LH, HL, HH) across `spec.levels` dyadic levels.
pub fn wavelet_score(patch: &[f64], p: usize, spec: &WaveletSpec) -> Result<f64, SaliencyError> {
    spec.validate(p)?;
    let mut energy = 0.0;
    let mut tile = patch.to_vec();
    let mut side = p;
    for _ in 0..spec.levels {
        let sub = haar_dwt2(&tile, side)?;
        for band in [&sub.lh, &sub.hl, &sub.hh] {
            energy += band.iter().map(|v| v * v).sum::<f64>();
        }
        tile = sub.ll;
        side /= 2;
    }
    Ok(libm::sqrt(energy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn constant_tile_has_no_detail() {
        let sub = haar_dwt2(&vec![3.0; 16], 4).unwrap();
        assert!(sub.ll.iter().all(|&v| v == 6.0)); // orthonormal scaling: 2c
        assert!(sub.lh.iter().all(|&v| v == 0.0));
        assert!(sub.hl.iter().all(|&v| v == 0.0));
        assert!(sub.hh.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn perfect_reconstruction_on_random_tiles() {
        let mut rng = SplitMix64::new(13);
        for _ in 0..50 {
            let tile: Vec<f64> = (0..256).map(|_| rng.next_gaussian()).collect();
            let back = haar_idwt2(&haar_dwt2(&tile, 16).unwrap());
            for (a, b) in tile.iter().zip(&back) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn parseval_energy_equality() {
        let mut rng = SplitMix64::new(14);
        for _ in 0..50 {
            let tile: Vec<f64> = (0..256).map(|_| rng.next_gaussian()).collect();
            let input_energy: f64 = tile.iter().map(|v| v * v).sum();
            let sub = haar_dwt2(&tile, 16).unwrap();
            let out_energy: f64 = [&sub.ll, &sub.lh, &sub.hl, &sub.hh]
                .iter()
                .map(|b| b.iter().map(|v| v * v).sum::<f64>())
                .sum();
            assert!((input_energy - out_energy).abs() < 1e-10);
        }
    }

    #[test]
    fn odd_side_rejected() {
        assert!(matches!(haar_dwt2(&vec![0.0; 9], 3), Err(SaliencyError::OddSide { side: 3 })));
    }

    #[test]
    fn constant_patch_scores_zero() {
        assert_eq!(wavelet_score(&vec![1.25; 64], 8, &WaveletSpec::default()).unwrap(), 0.0);
    }

    #[test]
    fn checkerboard_beats_ramp() {
        let p = 8;
        let mut checker = vec![0.0; p * p];
        let mut ramp = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..p {
                checker[i * p + j] = ((i + j) % 2) as f64;
                ramp[i * p + j] = j as f64 / (p - 1) as f64;
            }
        }
        let spec = WaveletSpec::default();
        let sc = wavelet_score(&checker, p, &spec).unwrap();
        let sr = wavelet_score(&ramp, p, &spec).unwrap();
        assert!(sc > sr, "checkerboard {sc} should beat ramp {sr}");
    }

    #[test]
    fn score_dc_invariant() {
        let mut rng = SplitMix64::new(15);
        let patch: Vec<f64> = (0..64).map(|_| rng.next_gaussian()).collect();
        let shifted: Vec<f64> = patch.iter().map(|v| v + 123.456).collect();
        let spec = WaveletSpec { levels: 2 };
        let a = wavelet_score(&patch, 8, &spec).unwrap();
        let b = wavelet_score(&shifted, 8, &spec).unwrap();
        assert!((a - b).abs() <= 1e-10 * a.max(1.0));
    }

    #[test]
    fn levels_must_divide_patch() {
        let spec = WaveletSpec { levels: 3 };
        assert!(wavelet_score(&vec![0.0; 16], 4, &spec).is_err());
    }
}
