//! Gabor filter bank for edge/texture saliency.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::SaliencyError;

/// Parameters of one Gabor kernel: a cosine carrier of wavelength
/// `lambda` at orientation `theta` (phase `psi`) under a Gaussian
/// envelope of width `sigma` and aspect ratio `gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaborParams {
    /// Carrier wavelength in pixels.
    pub lambda: f64,
    /// Orientation in radians.
    pub theta: f64,
    /// Phase offset in radians.
    pub psi: f64,
    /// Gaussian envelope standard deviation in pixels.
    pub sigma: f64,
    /// Spatial aspect ratio.
    pub gamma: f64,
    /// Kernel side length, odd.
    pub kernel_size: usize,
}

impl GaborParams {
    pub fn validate(&self) -> Result<(), SaliencyError> {
        if !(self.lambda > 0.0 && self.sigma > 0.0 && self.gamma > 0.0) {
            return Err(SaliencyError::InvalidParams {
                detail: format!(
                    "lambda {}, sigma {}, gamma {} must all be positive",
                    self.lambda, self.sigma, self.gamma
                ),
            });
        }
        if self.kernel_size % 2 == 0 {
            return Err(SaliencyError::InvalidParams {
                detail: format!("kernel_size {} must be odd", self.kernel_size),
            });
        }
        Ok(())
    }
}

/// The standard four-orientation texture bank for patch side `p`:
/// theta in {0, pi/4, pi/2, 3pi/4}, lambda = p/2, sigma = 0.56 lambda,
/// gamma = 0.5, psi = 0, kernel side p-1 forced odd.
pub fn default_bank(patch_size: usize) -> Vec<GaborParams> {
    let lambda = patch_size as f64 / 2.0;
    let mut ks = patch_size.saturating_sub(1).max(1);
    if ks % 2 == 0 {
        ks -= 1;
    }
    (0..4)
        .map(|k| GaborParams {
            lambda,
            theta: k as f64 * core::f64::consts::FRAC_PI_4,
            psi: 0.0,
            sigma: 0.56 * lambda,
            gamma: 0.5,
            kernel_size: ks,
        })
        .collect()
}

/// Sample the kernel on an integer grid centered at the origin.
/// With `psi = 0` the center value is exactly 1.
pub fn gabor_kernel(params: &GaborParams) -> Result<Vec<f64>, SaliencyError> {
    params.validate()?;
    let ks = params.kernel_size;
    let half = (ks / 2) as isize;
    let (sin_t, cos_t) = (libm::sin(params.theta), libm::cos(params.theta));
    let mut kernel = vec![0.0; ks * ks];
    for row in -half..=half {
        for col in -half..=half {
            let (x, y) = (col as f64, row as f64);
            let xp = x * cos_t + y * sin_t;
            let yp = -x * sin_t + y * cos_t;
            let envelope = libm::exp(-(xp * xp + params.gamma * params.gamma * yp * yp) / (2.0 * params.sigma * params.sigma));
            let carrier = libm::cos(2.0 * core::f64::consts::PI * xp / params.lambda + params.psi);
            kernel[((row + half) * ks as isize + (col + half)) as usize] = envelope * carrier;
        }
    }
    Ok(kernel)
}

/// Filter response of a `p x p` grayscale patch, reflect padding.
///
/// The kernel is mean-subtracted, and each windowed sum is taken in
/// difference form against the window's center pixel, so a constant
/// patch produces an exactly zero response.
pub fn gabor_response(patch: &[f64], p: usize, params: &GaborParams) -> Result<Vec<f64>, SaliencyError> {
    let raw = gabor_kernel(params)?;
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let kernel: Vec<f64> = raw.iter().map(|v| v - mean).collect();
    let ks = params.kernel_size;
    let half = (ks / 2) as isize;
    let n = p as isize;
    let reflect = |i: isize| -> usize {
        let mut i = i;
        if n == 1 {
            return 0;
        }
        while i < 0 || i >= n {
            if i < 0 {
                i = -i;
            }
            if i >= n {
                i = 2 * (n - 1) - i;
            }
        }
        i as usize
    };
    let mut response = vec![0.0; p * p];
    for i in 0..n {
        for j in 0..n {
            let center = patch[(i * n + j) as usize];
            let mut acc = 0.0;
            for u in -half..=half {
                for v in -half..=half {
                    let src = patch[reflect(i + u) * p + reflect(j + v)];
                    acc += kernel[((u + half) * ks as isize + (v + half)) as usize] * (src - center);
                }
            }
            response[(i * n + j) as usize] = acc;
        }
    }
    Ok(response)
}

/// Patch significance from a Gabor bank: mean over the bank of the
/// Euclidean norm of each filter's response over the patch.
pub fn gabor_score(patch: &[f64], p: usize, bank: &[GaborParams]) -> Result<f64, SaliencyError> {
    if bank.is_empty() {
        return Err(SaliencyError::InvalidParams { detail: format!("empty Gabor bank") });
    }
    let mut total = 0.0;
    for params in bank {
        let response = gabor_response(patch, p, params)?;
        total += libm::sqrt(response.iter().map(|r| r * r).sum::<f64>());
    }
    Ok(total / bank.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn center_value_is_one_at_zero_phase() {
        let params = GaborParams { lambda: 8.0, theta: 0.7, psi: 0.0, sigma: 4.0, gamma: 0.5, kernel_size: 9 };
        let k = gabor_kernel(&params).unwrap();
        assert_eq!(k[4 * 9 + 4], 1.0);
    }

    #[test]
    fn theta_zero_and_pi_agree() {
        let base = GaborParams { lambda: 6.0, theta: 0.0, psi: 0.0, sigma: 3.0, gamma: 0.5, kernel_size: 11 };
        let flipped = GaborParams { theta: core::f64::consts::PI, ..base };
        let a = gabor_kernel(&base).unwrap();
        let b = gabor_kernel(&flipped).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_matches_pointwise_oracle() {
        let params = GaborParams {
            lambda: 8.0,
            theta: core::f64::consts::FRAC_PI_4,
            psi: 0.0,
            sigma: 4.48,
            gamma: 0.5,
            kernel_size: 15,
        };
        let k = gabor_kernel(&params).unwrap();
        // Direct evaluation of the kernel formula at each grid point.
        for row in -7isize..=7 {
            for col in -7isize..=7 {
                let (x, y) = (col as f64, row as f64);
                let xp = x * libm::cos(params.theta) + y * libm::sin(params.theta);
                let yp = -x * libm::sin(params.theta) + y * libm::cos(params.theta);
                let want = libm::exp(-(xp * xp + 0.25 * yp * yp) / (2.0 * 4.48 * 4.48))
                    * libm::cos(2.0 * core::f64::consts::PI * xp / 8.0);
                let got = k[((row + 7) * 15 + (col + 7)) as usize];
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = GaborParams { lambda: -1.0, theta: 0.0, psi: 0.0, sigma: 1.0, gamma: 0.5, kernel_size: 9 };
        assert!(gabor_kernel(&bad).is_err());
        let even = GaborParams { lambda: 4.0, theta: 0.0, psi: 0.0, sigma: 1.0, gamma: 0.5, kernel_size: 8 };
        assert!(gabor_kernel(&even).is_err());
    }

    #[test]
    fn constant_patch_scores_exactly_zero() {
        let patch = alloc::vec![0.37; 64];
        let score = gabor_score(&patch, 8, &default_bank(8)).unwrap();
        assert_eq!(score, 0.0);
    }

    #[test]
    fn vertical_edge_prefers_horizontal_carrier() {
        // Left half 0, right half 1: variation along x.
        let p = 16;
        let mut patch = alloc::vec![0.0; p * p];
        for i in 0..p {
            for j in p / 2..p {
                patch[i * p + j] = 1.0;
            }
        }
        let along_x = GaborParams { lambda: 8.0, theta: 0.0, psi: 0.0, sigma: 4.48, gamma: 0.5, kernel_size: 15 };
        let along_y = GaborParams { theta: core::f64::consts::FRAC_PI_2, ..along_x };
        let sx = gabor_score(&patch, p, &[along_x]).unwrap();
        let sy = gabor_score(&patch, p, &[along_y]).unwrap();
        assert!(sx > sy, "theta=0 score {sx} should beat theta=pi/2 score {sy}");
    }

    #[test]
    fn scores_are_non_negative() {
        let mut rng = SplitMix64::new(21);
        let bank = default_bank(8);
        for _ in 0..20 {
            let patch: alloc::vec::Vec<f64> = (0..64).map(|_| rng.next_gaussian()).collect();
            assert!(gabor_score(&patch, 8, &bank).unwrap() >= 0.0);
        }
    }
}
