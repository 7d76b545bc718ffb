//! Raster tiles and per-band normalization.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::bands::BandTable;

/// Errors from cube construction and normalization.
#[derive(Debug, Clone, PartialEq)]
pub enum CubeError {
    DimensionMismatch { detail: String },
    NonFinite,
    StatsMismatch { stats: usize, bands: usize },
    MissingBand { band_id: u32 },
}

impl core::fmt::Display for CubeError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            CubeError::DimensionMismatch { detail } => write!(f, "dimension mismatch: {detail}"),
            CubeError::NonFinite => write!(f, "cube contains non-finite values"),
            CubeError::StatsMismatch { stats, bands } => {
                write!(f, "normalization stats cover {stats} bands but cube has {bands}")
            }
            CubeError::MissingBand { band_id } => write!(f, "band id {band_id} not present in cube"),
        }
    }
}

impl core::error::Error for CubeError {}

/// A `(C, H, W)` raster tile of reflectance values with band metadata.
///
/// Data is row-major in `(band, row, col)` order. `normalized` records
/// whether values are z-scores (the stats then travel with the store).
#[derive(Debug, Clone)]
pub struct HyperCube {
    pub tile_id: String,
    pub band_table: BandTable,
    pub normalized: bool,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl HyperCube {
    pub fn new(
        tile_id: String,
        band_table: BandTable,
        dims: (usize, usize, usize),
        data: Vec<f64>,
    ) -> Result<Self, CubeError> {
        let (c, h, w) = dims;
        if band_table.len() != c {
            return Err(CubeError::DimensionMismatch {
                detail: format!("band table has {} bands, cube has {} channels", band_table.len(), c),
            });
        }
        if data.len() != c * h * w {
            return Err(CubeError::DimensionMismatch {
                detail: format!("expected {} values for ({c}, {h}, {w}), got {}", c * h * w, data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(CubeError::NonFinite);
        }
        Ok(HyperCube { tile_id, band_table, normalized: false, channels: c, height: h, width: w, data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let hw = self.height * self.width;
        &self.data[channel * hw..(channel + 1) * hw]
    }

    /// Plane for a band id rather than a channel index.
    pub fn plane_by_id(&self, band_id: u32) -> Result<&[f64], CubeError> {
        let idx = self
            .band_table
            .position(band_id)
            .ok_or(CubeError::MissingBand { band_id })?;
        Ok(self.plane(idx))
    }

    /// Per-pixel mean over channels — the grayscale used for saliency.
    pub fn grayscale(&self) -> Vec<f64> {
        let hw = self.height * self.width;
        let mut gray = vec![0.0; hw];
        for c in 0..self.channels {
            let plane = self.plane(c);
            for (g, v) in gray.iter_mut().zip(plane) {
                *g += v;
            }
        }
        let inv = 1.0 / self.channels as f64;
        for g in &mut gray {
            *g *= inv;
        }
        gray
    }

    pub fn with_data(&self, data: Vec<f64>) -> Result<Self, CubeError> {
        HyperCube::new(self.tile_id.clone(), self.band_table.clone(), self.dims(), data)
    }
}

/// Per-band mean and standard deviation over the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct BandStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Standard deviations below this are floored so constant bands
/// normalize to zero instead of blowing up.
pub const STD_FLOOR: f64 = 1e-8;

impl BandStats {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Per-band statistics over a set of tiles (the training split only —
/// the caller is responsible for not leaking evaluation tiles in).
pub fn compute_stats(tiles: &[&HyperCube]) -> Result<BandStats, CubeError> {
    let first = tiles.first().ok_or(CubeError::DimensionMismatch {
        detail: format!("no tiles supplied"),
    })?;
    let (c, h, w) = first.dims();
    let mut mean = vec![0.0; c];
    let mut m2 = vec![0.0; c];
    let n = (tiles.len() * h * w) as f64;
    for tile in tiles {
        if tile.dims() != (c, h, w) {
            return Err(CubeError::DimensionMismatch {
                detail: format!("tile {} dims {:?} differ from {:?}", tile.tile_id, tile.dims(), (c, h, w)),
            });
        }
        for ch in 0..c {
            for v in tile.plane(ch) {
                mean[ch] += v;
            }
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    for tile in tiles {
        for ch in 0..c {
            for v in tile.plane(ch) {
                let d = v - mean[ch];
                m2[ch] += d * d;
            }
        }
    }
    let std: Vec<f64> = m2.iter().map(|&s| libm::sqrt(s / n).max(STD_FLOOR)).collect();
    Ok(BandStats { mean, std })
}

/// Z-score each band with the supplied stats.
pub fn normalize(cube: &HyperCube, stats: &BandStats) -> Result<HyperCube, CubeError> {
    let (c, h, w) = cube.dims();
    if stats.len() != c {
        return Err(CubeError::StatsMismatch { stats: stats.len(), bands: c });
    }
    let hw = h * w;
    let mut data = Vec::with_capacity(c * hw);
    for ch in 0..c {
        let (m, s) = (stats.mean[ch], stats.std[ch]);
        data.extend(cube.plane(ch).iter().map(|v| (v - m) / s));
    }
    let mut out = cube.with_data(data)?;
    out.normalized = true;
    Ok(out)
}

/// Inverse of [`normalize`].
pub fn denormalize(cube: &HyperCube, stats: &BandStats) -> Result<HyperCube, CubeError> {
    let (c, h, w) = cube.dims();
    if stats.len() != c {
        return Err(CubeError::StatsMismatch { stats: stats.len(), bands: c });
    }
    let hw = h * w;
    let mut data = Vec::with_capacity(c * hw);
    for ch in 0..c {
        let (m, s) = (stats.mean[ch], stats.std[ch]);
        data.extend(cube.plane(ch).iter().map(|v| v * s + m));
    }
    let mut out = cube.with_data(data)?;
    out.normalized = false;
    Ok(out)
}
