//! Patch saliency scoring and guided mask construction.
//!
//! Patches are scored for structural complexity by a Gabor bank or a
//! Haar wavelet decomposition of the channel-mean grayscale; the mask
//! then hides the top-scoring fraction (or keeps it visible, or falls
//! back to seeded random selection per the curriculum schedule).

mod gabor;
mod haar;

pub use gabor::{default_bank, gabor_kernel, gabor_response, gabor_score, GaborParams};
pub use haar::{haar_dwt2, haar_idwt2, wavelet_score, HaarSubbands, WaveletSpec};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::cube::HyperCube;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq)]
pub enum SaliencyError {
    InvalidParams { detail: String },
    OddSide { side: usize },
    IndivisibleDims { dim: usize, patch: usize },
    RatioOutOfRange { ratio: f64 },
}

impl core::fmt::Display for SaliencyError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SaliencyError::InvalidParams { detail } => write!(f, "invalid saliency parameters: {detail}"),
            SaliencyError::OddSide { side } => write!(f, "Haar transform needs an even side, got {side}"),
            SaliencyError::IndivisibleDims { dim, patch } => {
                write!(f, "patch size {patch} does not divide image dimension {dim}")
            }
            SaliencyError::RatioOutOfRange { ratio } => {
                write!(f, "masking ratio {ratio} outside [0, 1]")
            }
        }
    }
}

impl core::error::Error for SaliencyError {}

/// Which filter family produces the patch scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMethod {
    Gabor,
    Wavelet,
    /// Sum of the Gabor and wavelet scores per patch.
    Combined,
}

/// How the scored patches map to a mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSelection {
    /// Hide the highest-scoring patches.
    SalientMasked,
    /// Keep the highest-scoring patches visible, hide the rest.
    SalientVisible,
    /// Seeded uniform choice without replacement.
    Random,
}

/// Per-patch saliency scores over the `(H/p) x (W/p)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    scores: Vec<f64>,
    pub patch_size: usize,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl ScoreVector {
    pub fn new(scores: Vec<f64>, patch_size: usize, grid_h: usize, grid_w: usize) -> Result<Self, SaliencyError> {
        if scores.len() != grid_h * grid_w {
            return Err(SaliencyError::InvalidParams {
                detail: format!("{} scores for a {grid_h} x {grid_w} grid", scores.len()),
            });
        }
        if !scores.iter().all(|s| s.is_finite() && *s >= 0.0) {
            return Err(SaliencyError::InvalidParams {
                detail: format!("scores must be finite and non-negative"),
            });
        }
        Ok(ScoreVector { scores, patch_size, grid_h, grid_w })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Boolean visible/masked partition of the patch grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMask {
    masked: Vec<bool>,
    pub ratio: f64,
    pub mode: MaskSelection,
}

impl PatchMask {
    pub fn masked(&self) -> &[bool] {
        &self.masked
    }

    pub fn len(&self) -> usize {
        self.masked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masked.is_empty()
    }

    pub fn count_masked(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        (0..self.masked.len()).filter(|&i| self.masked[i]).collect()
    }

    pub fn visible_indices(&self) -> Vec<usize> {
        (0..self.masked.len()).filter(|&i| !self.masked[i]).collect()
    }
}

/// `round(r * N)` with round-half-up (all quantities non-negative).
pub fn masked_count(ratio: f64, n: usize) -> usize {
    (libm::round(ratio * n as f64) as usize).min(n)
}

/// Score every patch of the cube's channel-mean grayscale.
pub fn score_patches(cube: &HyperCube, method: ScoreMethod, p: usize) -> Result<ScoreVector, SaliencyError> {
    let (_, h, w) = cube.dims();
    if p == 0 || h % p != 0 {
        return Err(SaliencyError::IndivisibleDims { dim: h, patch: p });
    }
    if w % p != 0 {
        return Err(SaliencyError::IndivisibleDims { dim: w, patch: p });
    }
    let gray = cube.grayscale();
    let (grid_h, grid_w) = (h / p, w / p);
    let bank = default_bank(p);
    let spec = WaveletSpec::default();
    let mut scores = Vec::with_capacity(grid_h * grid_w);
    let mut patch = alloc::vec![0.0; p * p];
    for gr in 0..grid_h {
        for gc in 0..grid_w {
            for i in 0..p {
                for j in 0..p {
                    patch[i * p + j] = gray[(gr * p + i) * w + gc * p + j];
                }
            }
            let score = match method {
                ScoreMethod::Gabor => gabor_score(&patch, p, &bank)?,
                ScoreMethod::Wavelet => wavelet_score(&patch, p, &spec)?,
                ScoreMethod::Combined => {
                    gabor_score(&patch, p, &bank)? + wavelet_score(&patch, p, &spec)?
                }
            };
            scores.push(score);
        }
    }
    ScoreVector::new(scores, p, grid_h, grid_w)
}

/// Build the visible/masked partition.
///
/// Exactly `round(r * N)` patches are masked in every mode. Ties in
/// score rank break toward the lower patch index.
pub fn build_mask(scores: &ScoreVector, ratio: f64, mode: MaskSelection, seed: u64) -> Result<PatchMask, SaliencyError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(SaliencyError::RatioOutOfRange { ratio });
    }
    let n = scores.len();
    let k = masked_count(ratio, n);
    let mut masked = alloc::vec![false; n];
    match mode {
        MaskSelection::Random => {
            let mut rng = SplitMix64::derived(seed, &[0x6d61_736b]);
            let mut order: Vec<usize> = (0..n).collect();
            for i in 0..k {
                let j = i + rng.next_below(n - i);
                order.swap(i, j);
            }
            for &idx in &order[..k] {
                masked[idx] = true;
            }
        }
        MaskSelection::SalientMasked | MaskSelection::SalientVisible => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                scores.scores()[b]
                    .partial_cmp(&scores.scores()[a])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let chosen = match mode {
                // Top-k scores hidden.
                MaskSelection::SalientMasked => &order[..k],
                // Top (n - k) kept visible; the low-scoring remainder hidden.
                MaskSelection::SalientVisible => &order[n - k..],
                MaskSelection::Random => unreachable!(),
            };
            for &idx in chosen {
                masked[idx] = true;
            }
        }
    }
    Ok(PatchMask { masked, ratio, mode })
}

/// Masking curriculum: the configured guided mode before the switch
/// epoch, random at and after it. `switch_epoch = None` means guided
/// forever; `Some(0)` means random from the start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskSchedule {
    pub guided: MaskSelection,
    pub switch_epoch: Option<u64>,
}

pub fn mask_schedule(epoch: u64, schedule: &MaskSchedule) -> MaskSelection {
    match schedule.switch_epoch {
        Some(switch) if epoch >= switch => MaskSelection::Random,
        _ => schedule.guided,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bands::{BandRange, BandTable};

    fn gray_cube(h: usize, w: usize, data: Vec<f64>) -> HyperCube {
        let table = BandTable::new("g", alloc::vec![BandRange::new(0, 500.0, 510.0).unwrap()]).unwrap();
        HyperCube::new("t".into(), table, (1, h, w), data).unwrap()
    }

    #[test]
    fn patch_grid_counts() {
        let cube = gray_cube(32, 32, alloc::vec![0.0; 1024]);
        let sv = score_patches(&cube, ScoreMethod::Wavelet, 8).unwrap();
        assert_eq!(sv.len(), 16);
        assert_eq!((sv.grid_h, sv.grid_w), (4, 4));
        assert!(score_patches(&cube, ScoreMethod::Wavelet, 5).is_err());
    }

    #[test]
    fn n_patches_for_paper_geometry() {
        // 224 x 224 image, 16 x 16 patches -> 196.
        assert_eq!((224 / 16) * (224 / 16), 196);
        let cube = gray_cube(224, 224, alloc::vec![0.1; 224 * 224]);
        let sv = score_patches(&cube, ScoreMethod::Wavelet, 16).unwrap();
        assert_eq!(sv.len(), 196);
    }

    #[test]
    fn masked_count_half_up() {
        assert_eq!(masked_count(0.75, 196), 147);
        assert_eq!(masked_count(0.25, 196), 49);
        assert_eq!(masked_count(0.5, 16), 8);
        assert_eq!(masked_count(0.1, 196), 20); // 19.6 rounds up
        assert_eq!(masked_count(0.0, 196), 0);
        assert_eq!(masked_count(1.0, 196), 196);
    }

    fn score_vec(scores: Vec<f64>) -> ScoreVector {
        let n = scores.len();
        ScoreVector::new(scores, 8, 1, n).unwrap()
    }

    #[test]
    fn salient_masked_sort_oracle() {
        let sv = score_vec(alloc::vec![3.0, 1.0, 2.0, 0.0]);
        let mask = build_mask(&sv, 0.5, MaskSelection::SalientMasked, 0).unwrap();
        assert_eq!(mask.masked_indices(), alloc::vec![0, 2]);
    }

    #[test]
    fn salient_visible_keeps_top_scores() {
        let sv = score_vec(alloc::vec![3.0, 1.0, 2.0, 0.0]);
        let mask = build_mask(&sv, 0.5, MaskSelection::SalientVisible, 0).unwrap();
        assert_eq!(mask.masked_indices(), alloc::vec![1, 3]);
    }

    #[test]
    fn boundary_ratios() {
        let sv = score_vec(alloc::vec![1.0; 10]);
        for mode in [MaskSelection::SalientMasked, MaskSelection::SalientVisible, MaskSelection::Random] {
            assert_eq!(build_mask(&sv, 0.0, mode, 1).unwrap().count_masked(), 0);
            assert_eq!(build_mask(&sv, 1.0, mode, 1).unwrap().count_masked(), 10);
        }
        assert!(build_mask(&sv, 1.5, MaskSelection::Random, 1).is_err());
    }

    #[test]
    fn mask_count_exact_for_all_modes() {
        let mut rng = SplitMix64::new(40);
        let scores: Vec<f64> = (0..196).map(|_| rng.next_f64()).collect();
        let sv = score_vec(scores);
        for r in [0.0, 0.25, 0.5, 0.75, 1.0] {
            for mode in [MaskSelection::SalientMasked, MaskSelection::SalientVisible, MaskSelection::Random] {
                let mask = build_mask(&sv, r, mode, 7).unwrap();
                assert_eq!(mask.count_masked(), masked_count(r, 196));
            }
        }
    }

    #[test]
    fn build_mask_deterministic() {
        let sv = score_vec((0..64).map(|i| (i * 37 % 64) as f64).collect());
        for mode in [MaskSelection::SalientMasked, MaskSelection::SalientVisible, MaskSelection::Random] {
            let a = build_mask(&sv, 0.75, mode, 123).unwrap();
            let b = build_mask(&sv, 0.75, mode, 123).unwrap();
            assert_eq!(a, b);
        }
        let a = build_mask(&sv, 0.75, MaskSelection::Random, 123).unwrap();
        let b = build_mask(&sv, 0.75, MaskSelection::Random, 124).unwrap();
        assert_ne!(a.masked_indices(), b.masked_indices());
    }

    #[test]
    fn salient_masked_separates_scores() {
        let mut rng = SplitMix64::new(41);
        let scores: Vec<f64> = (0..100).map(|_| rng.next_f64()).collect();
        let sv = score_vec(scores.clone());
        let mask = build_mask(&sv, 0.3, MaskSelection::SalientMasked, 0).unwrap();
        let min_masked = mask
            .masked_indices()
            .iter()
            .map(|&i| scores[i])
            .fold(f64::INFINITY, f64::min);
        let max_visible = mask
            .visible_indices()
            .iter()
            .map(|&i| scores[i])
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(min_masked >= max_visible);
    }

    #[test]
    fn scores_invariant_to_channel_permutation() {
        let table = BandTable::new(
            "three",
            alloc::vec![
                BandRange::new(0, 500.0, 510.0).unwrap(),
                BandRange::new(1, 520.0, 530.0).unwrap(),
                BandRange::new(2, 540.0, 550.0).unwrap(),
            ],
        )
        .unwrap();
        let mut rng = SplitMix64::new(50);
        let hw = 16 * 16;
        let planes: Vec<Vec<f64>> = (0..3).map(|_| (0..hw).map(|_| rng.next_f64()).collect()).collect();
        let mut fwd = Vec::new();
        for p in &planes {
            fwd.extend_from_slice(p);
        }
        let mut rev = Vec::new();
        for p in planes.iter().rev() {
            rev.extend_from_slice(p);
        }
        let a = HyperCube::new("a".into(), table.clone(), (3, 16, 16), fwd).unwrap();
        let b = HyperCube::new("b".into(), table, (3, 16, 16), rev).unwrap();
        for method in [ScoreMethod::Gabor, ScoreMethod::Wavelet] {
            let sa = score_patches(&a, method, 8).unwrap();
            let sb = score_patches(&b, method, 8).unwrap();
            for (x, y) in sa.scores().iter().zip(sb.scores()) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn schedule_switches_to_random() {
        let sched = MaskSchedule { guided: MaskSelection::SalientMasked, switch_epoch: Some(100) };
        assert_eq!(mask_schedule(99, &sched), MaskSelection::SalientMasked);
        assert_eq!(mask_schedule(100, &sched), MaskSelection::Random);
        let zero = MaskSchedule { guided: MaskSelection::SalientMasked, switch_epoch: Some(0) };
        assert_eq!(mask_schedule(0, &zero), MaskSelection::Random);
        let never = MaskSchedule { guided: MaskSelection::SalientVisible, switch_epoch: None };
        assert_eq!(mask_schedule(1_000_000, &never), MaskSelection::SalientVisible);
    }
}
