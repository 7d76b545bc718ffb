//! Spectral band alignment: aggregating many narrow source bands into
//! synthetic bands matching a coarser target sensor.
//!
//! A target band's subset holds every source band whose wavelength range
//! is contained in the target range; the synthetic band is the pixelwise
//! mean over that subset. Containment (not partial overlap) is the
//! normative rule; [`OverlapMode::Intersecting`] is available for
//! comparison.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::cube::{CubeError, HyperCube};

#[derive(Debug, Clone, PartialEq)]
pub enum BandError {
    InvalidRange { band_id: u32, detail: String },
    DuplicateBandId { band_id: u32 },
    EmptyTable { sensor: String },
    /// The target band has no source bands under the selected overlap mode.
    EmptySubset { target_band_id: u32 },
    MissingBand { band_id: u32 },
    Cube(CubeError),
}

impl core::fmt::Display for BandError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            BandError::InvalidRange { band_id, detail } => {
                write!(f, "invalid wavelength range for band {band_id}: {detail}")
            }
            BandError::DuplicateBandId { band_id } => write!(f, "duplicate band id {band_id}"),
            BandError::EmptyTable { sensor } => write!(f, "band table for {sensor} is empty"),
            BandError::EmptySubset { target_band_id } => {
                write!(f, "target band {target_band_id} has no contained source bands")
            }
            BandError::MissingBand { band_id } => write!(f, "band id {band_id} not in source table"),
            BandError::Cube(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for BandError {}

impl From<CubeError> for BandError {
    fn from(e: CubeError) -> Self {
        BandError::Cube(e)
    }
}

/// Wavelength range of one spectral band, in nanometers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandRange {
    pub band_id: u32,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl BandRange {
    pub fn new(band_id: u32, lambda_min: f64, lambda_max: f64) -> Result<Self, BandError> {
        if !(lambda_min < lambda_max) {
            return Err(BandError::InvalidRange {
                band_id,
                detail: format!("min {lambda_min} must be below max {lambda_max}"),
            });
        }
        if lambda_min <= 100.0 || lambda_max >= 20000.0 {
            return Err(BandError::InvalidRange {
                band_id,
                detail: format!("[{lambda_min}, {lambda_max}] nm outside (100, 20000)"),
            });
        }
        Ok(BandRange { band_id, lambda_min, lambda_max })
    }

    pub fn contains(&self, other: &BandRange) -> bool {
        other.lambda_min >= self.lambda_min && other.lambda_max <= self.lambda_max
    }

    pub fn intersects(&self, other: &BandRange) -> bool {
        other.lambda_min < self.lambda_max && other.lambda_max > self.lambda_min
    }
}

/// Ordered list of band ranges for one sensor. Construction sorts by
/// ascending `lambda_min` and rejects duplicate ids.
#[derive(Debug, Clone, PartialEq)]
pub struct BandTable {
    pub sensor_name: String,
    ranges: Vec<BandRange>,
}

impl BandTable {
    pub fn new(sensor_name: &str, mut ranges: Vec<BandRange>) -> Result<Self, BandError> {
        if ranges.is_empty() {
            return Err(BandError::EmptyTable { sensor: sensor_name.into() });
        }
        ranges.sort_by(|a, b| a.lambda_min.partial_cmp(&b.lambda_min).unwrap());
        for i in 0..ranges.len() {
            for j in i + 1..ranges.len() {
                if ranges[i].band_id == ranges[j].band_id {
                    return Err(BandError::DuplicateBandId { band_id: ranges[i].band_id });
                }
            }
        }
        Ok(BandTable { sensor_name: sensor_name.into(), ranges })
    }

    pub fn ranges(&self) -> &[BandRange] {
        &self.ranges
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn position(&self, band_id: u32) -> Option<usize> {
        self.ranges.iter().position(|r| r.band_id == band_id)
    }
}

/// Source-subset selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OverlapMode {
    /// Source range fully inside the target range.
    #[default]
    Contained,
    /// Any wavelength overlap counts.
    Intersecting,
}

/// Per-target-band subsets of source band ids.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentMap {
    pub mode: OverlapMode,
    /// One entry per target band, in target-table order; each is a
    /// non-empty list of source band ids.
    subsets: Vec<(u32, Vec<u32>)>,
}

impl AlignmentMap {
    pub fn subsets(&self) -> &[(u32, Vec<u32>)] {
        &self.subsets
    }

    pub fn target_len(&self) -> usize {
        self.subsets.len()
    }
}

/// Source band ids whose range matches the target under `mode`.
/// May be empty; emptiness is rejected at [`build_alignment`] time.
pub fn contained_subset(target: &BandRange, source: &BandTable, mode: OverlapMode) -> Vec<u32> {
    source
        .ranges()
        .iter()
        .filter(|s| match mode {
            OverlapMode::Contained => target.contains(s),
            OverlapMode::Intersecting => target.intersects(s),
        })
        .map(|s| s.band_id)
        .collect()
}

/// Build the source-to-target alignment. Fails with `EmptySubset` if any
/// target band matches no source bands.
pub fn build_alignment(source: &BandTable, target: &BandTable, mode: OverlapMode) -> Result<AlignmentMap, BandError> {
    if source.is_empty() {
        return Err(BandError::EmptyTable { sensor: source.sensor_name.clone() });
    }
    let mut subsets = Vec::with_capacity(target.len());
    for t in target.ranges() {
        let ids = contained_subset(t, source, mode);
        if ids.is_empty() {
            return Err(BandError::EmptySubset { target_band_id: t.band_id });
        }
        subsets.push((t.band_id, ids));
    }
    Ok(AlignmentMap { mode, subsets })
}

/// Pixelwise mean over a subset of the cube's bands.
pub fn synthesize_band(cube: &HyperCube, subset: &[u32]) -> Result<Vec<f64>, BandError> {
    if subset.is_empty() {
        return Err(BandError::EmptySubset { target_band_id: 0 });
    }
    let (_, h, w) = cube.dims();
    let mut plane = alloc::vec![0.0; h * w];
    for &id in subset {
        let src = cube.plane_by_id(id).map_err(|_| BandError::MissingBand { band_id: id })?;
        for (acc, v) in plane.iter_mut().zip(src) {
            *acc += v;
        }
    }
    let inv = 1.0 / subset.len() as f64;
    for v in &mut plane {
        *v *= inv;
    }
    Ok(plane)
}

/// Aggregate the cube into the target band layout: one synthesized plane
/// per target band, ordered as the target table.
pub fn align_cube(cube: &HyperCube, map: &AlignmentMap, target: &BandTable) -> Result<HyperCube, BandError> {
    let (_, h, w) = cube.dims();
    let mut data = Vec::with_capacity(map.target_len() * h * w);
    for (_, subset) in map.subsets() {
        data.extend(synthesize_band(cube, subset)?);
    }
    let mut out = HyperCube::new(cube.tile_id.clone(), target.clone(), (map.target_len(), h, w), data)?;
    out.normalized = cube.normalized;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use alloc::vec;

    fn range(id: u32, lo: f64, hi: f64) -> BandRange {
        BandRange::new(id, lo, hi).unwrap()
    }

    #[test]
    fn contained_subset_picks_inner_ranges() {
        let target = range(0, 500.0, 600.0);
        let source = BandTable::new(
            "src",
            vec![range(1, 500.0, 550.0), range(2, 550.0, 600.0), range(3, 700.0, 750.0)],
        )
        .unwrap();
        assert_eq!(contained_subset(&target, &source, OverlapMode::Contained), vec![1, 2]);
    }

    #[test]
    fn contained_subset_empty_when_disjoint() {
        let target = range(0, 400.0, 450.0);
        let source = BandTable::new("src", vec![range(1, 520.0, 560.0), range(2, 600.0, 640.0)]).unwrap();
        assert!(contained_subset(&target, &source, OverlapMode::Contained).is_empty());
    }

    #[test]
    fn contained_subset_invariant_to_source_ordering() {
        let target = range(0, 500.0, 700.0);
        let fwd = vec![range(1, 505.0, 520.0), range(2, 522.0, 540.0), range(3, 680.0, 699.0)];
        let mut rev = fwd.clone();
        rev.reverse();
        let a = contained_subset(&target, &BandTable::new("a", fwd).unwrap(), OverlapMode::Contained);
        let b = contained_subset(&target, &BandTable::new("b", rev).unwrap(), OverlapMode::Contained);
        let mut a_sorted = a.clone();
        a_sorted.sort_unstable();
        let mut b_sorted = b;
        b_sorted.sort_unstable();
        assert_eq!(a_sorted, b_sorted);
    }

    #[test]
    fn intersecting_mode_is_wider() {
        // Source band straddles the target edge: excluded by containment,
        // included by intersection.
        let target = range(0, 500.0, 600.0);
        let source = BandTable::new("src", vec![range(1, 590.0, 620.0)]).unwrap();
        assert!(contained_subset(&target, &source, OverlapMode::Contained).is_empty());
        assert_eq!(contained_subset(&target, &source, OverlapMode::Intersecting), vec![1]);
    }

    #[test]
    fn self_alignment_is_singletons() {
        let table = BandTable::new(
            "six",
            (0..6).map(|i| range(i, 450.0 + 100.0 * i as f64, 500.0 + 100.0 * i as f64)).collect(),
        )
        .unwrap();
        let map = build_alignment(&table, &table, OverlapMode::Contained).unwrap();
        for (tid, subset) in map.subsets() {
            assert_eq!(subset, &vec![*tid]);
        }
    }

    #[test]
    fn alignment_fails_on_uncovered_target() {
        let source = BandTable::new("src", vec![range(0, 500.0, 510.0)]).unwrap();
        let target = BandTable::new("tgt", vec![range(0, 500.0, 520.0), range(1, 900.0, 950.0)]).unwrap();
        match build_alignment(&source, &target, OverlapMode::Contained) {
            Err(BandError::EmptySubset { target_band_id }) => assert_eq!(target_band_id, 1),
            other => panic!("expected EmptySubset, got {other:?}"),
        }
    }

    fn synthetic_tables() -> (BandTable, BandTable) {
        // 218 narrow source bands spanning 420-2450 nm; 6 wide targets.
        let step = (2450.0 - 420.0) / 218.0;
        let source = BandTable::new(
            "narrow",
            (0..218)
                .map(|i| range(i, 420.0 + step * i as f64, 420.0 + step * (i as f64 + 0.9)))
                .collect(),
        )
        .unwrap();
        let target = BandTable::new(
            "wide",
            vec![
                range(0, 430.0, 520.0),
                range(1, 520.0, 610.0),
                range(2, 620.0, 700.0),
                range(3, 840.0, 900.0),
                range(4, 1550.0, 1670.0),
                range(5, 2080.0, 2300.0),
            ],
        )
        .unwrap();
        (source, target)
    }

    #[test]
    fn alignment_matches_double_loop_oracle() {
        let (source, target) = synthetic_tables();
        let map = build_alignment(&source, &target, OverlapMode::Contained).unwrap();
        for ((tid, subset), t) in map.subsets().iter().zip(target.ranges()) {
            assert_eq!(*tid, t.band_id);
            // Brute-force containment scan.
            let expect: Vec<u32> = source
                .ranges()
                .iter()
                .filter(|s| s.lambda_min >= t.lambda_min && s.lambda_max <= t.lambda_max)
                .map(|s| s.band_id)
                .collect();
            assert!(!expect.is_empty());
            assert_eq!(subset, &expect);
        }
    }

    fn random_cube(source: &BandTable, h: usize, w: usize, seed: u64) -> HyperCube {
        let mut rng = SplitMix64::new(seed);
        let c = source.len();
        let data: Vec<f64> = (0..c * h * w).map(|_| rng.next_f64()).collect();
        HyperCube::new("t".into(), source.clone(), (c, h, w), data).unwrap()
    }

    #[test]
    fn synthesize_band_cases() {
        let (source, _) = synthetic_tables();
        let cube = random_cube(&source, 4, 4, 7);
        // Singleton subset is the band itself.
        let plane = synthesize_band(&cube, &[5]).unwrap();
        assert_eq!(plane.as_slice(), cube.plane_by_id(5).unwrap());
        // Mean matches a per-pixel loop oracle.
        let subset = [0u32, 3, 10, 100, 217];
        let plane = synthesize_band(&cube, &subset).unwrap();
        for px in 0..16 {
            let mut acc = 0.0;
            for &id in &subset {
                acc += cube.plane_by_id(id).unwrap()[px];
            }
            assert!((plane[px] - acc / 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn synthesize_constant_planes() {
        let table = BandTable::new(
            "three",
            vec![range(0, 500.0, 510.0), range(1, 520.0, 530.0), range(2, 540.0, 550.0)],
        )
        .unwrap();
        let mut data = alloc::vec![1.0; 4];
        data.extend(alloc::vec![2.0; 4]);
        data.extend(alloc::vec![3.0; 4]);
        let cube = HyperCube::new("t".into(), table, (3, 2, 2), data).unwrap();
        let plane = synthesize_band(&cube, &[0, 1, 2]).unwrap();
        assert!(plane.iter().all(|&v| (v - 2.0).abs() < 1e-15));
    }

    #[test]
    fn align_cube_has_target_band_count_and_envelope() {
        let (source, target) = synthetic_tables();
        let cube = random_cube(&source, 6, 6, 99);
        let map = build_alignment(&source, &target, OverlapMode::Contained).unwrap();
        let aligned = align_cube(&cube, &map, &target).unwrap();
        assert_eq!(aligned.dims().0, 6);
        // Every synthesized pixel lies inside its subset's min/max envelope.
        for (k, (_, subset)) in map.subsets().iter().enumerate() {
            for px in 0..36 {
                let vals: Vec<f64> = subset.iter().map(|&id| cube.plane_by_id(id).unwrap()[px]).collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let got = aligned.plane(k)[px];
                assert!(got >= lo - 1e-12 && got <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn align_cube_is_linear() {
        let (source, target) = synthetic_tables();
        let map = build_alignment(&source, &target, OverlapMode::Contained).unwrap();
        let x = random_cube(&source, 4, 4, 1);
        let y = random_cube(&source, 4, 4, 2);
        let (a, b) = (0.7, -1.3);
        let combo_data: Vec<f64> = x.data().iter().zip(y.data()).map(|(xv, yv)| a * xv + b * yv).collect();
        let combo = x.with_data(combo_data).unwrap();
        let lhs = align_cube(&combo, &map, &target).unwrap();
        let ax = align_cube(&x, &map, &target).unwrap();
        let ay = align_cube(&y, &map, &target).unwrap();
        for ((l, xv), yv) in lhs.data().iter().zip(ax.data()).zip(ay.data()) {
            assert!((l - (a * xv + b * yv)).abs() < 1e-12);
        }
    }

    #[test]
    fn spectrally_constant_cube_stays_constant() {
        let (source, target) = synthetic_tables();
        let cube = HyperCube::new("t".into(), source.clone(), (218, 2, 2), alloc::vec![0.4; 218 * 4]).unwrap();
        let map = build_alignment(&source, &target, OverlapMode::Contained).unwrap();
        let aligned = align_cube(&cube, &map, &target).unwrap();
        assert!(aligned.data().iter().all(|&v| (v - 0.4).abs() < 1e-12));
    }
}
