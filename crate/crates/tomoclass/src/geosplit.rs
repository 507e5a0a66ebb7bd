//! Spatially contiguous train/test partitions.
//!
//! Two strategies: a single contiguous swath of columns (or rows) covering a
//! fixed fraction of the grid width, and rejection-sampled non-overlapping
//! square regions accumulated until the test share of labeled pixels reaches
//! its target. Both are fully determined by (method, params, seed, dims).

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::cube::{read_label_raster, write_label_raster, SpeciesMap, MAX_CLASS_ID};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Per-pixel split assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Assignment {
    Excluded = 0,
    Train = 1,
    Test = 2,
}

impl Assignment {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Assignment::Excluded),
            1 => Ok(Assignment::Train),
            2 => Ok(Assignment::Test),
            c => Err(Error::Domain(format!("unknown assignment code {c}"))),
        }
    }
}

/// Swath orientation: vertical bands span columns (the azimuth/width axis).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Vertical,
    Horizontal,
}

/// Parameters of the swath split.
#[derive(Debug, Clone, PartialEq)]
pub struct SwathParams {
    pub test_width_frac: f64,
    pub orientation: Orientation,
    /// Width in pixels of an EXCLUDED strip on each side of the test band.
    pub buffer_px: usize,
    /// Allowed deviation of the labeled test fraction from `test_width_frac`.
    pub tolerance: f64,
}

impl Default for SwathParams {
    fn default() -> Self {
        SwathParams {
            test_width_frac: 0.20,
            orientation: Orientation::Vertical,
            buffer_px: 0,
            tolerance: 0.02,
        }
    }
}

/// Parameters of the square split.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareParams {
    /// Square side as a fraction of the grid width (azimuth extent).
    pub square_side_frac: f64,
    pub target_test_frac: f64,
    pub tolerance: f64,
    /// Width in pixels of an EXCLUDED ring around each test square.
    pub buffer_px: usize,
    pub max_attempts: usize,
}

impl Default for SquareParams {
    fn default() -> Self {
        SquareParams {
            square_side_frac: 0.05,
            target_test_frac: 0.20,
            tolerance: 0.02,
            buffer_px: 0,
            max_attempts: 10_000,
        }
    }
}

/// Split method with its parameters, kept for provenance.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitMethod {
    Swath(SwathParams),
    Square(SquareParams),
}

impl SplitMethod {
    pub fn name(&self) -> &'static str {
        match self {
            SplitMethod::Swath(_) => "swath",
            SplitMethod::Square(_) => "square",
        }
    }
}

/// Per-pixel train/test/excluded mask with provenance.
#[derive(Debug, Clone)]
pub struct SplitMask {
    pub n_range: usize,
    pub n_azimuth: usize,
    assignment: Vec<Assignment>,
    pub method: SplitMethod,
    pub seed: u64,
    /// Number of placed squares (1 for a swath).
    pub n_regions: usize,
}

impl SplitMask {
    pub fn get(&self, range: usize, azimuth: usize) -> Assignment {
        self.assignment[range * self.n_azimuth + azimuth]
    }

    pub fn assignment(&self) -> &[Assignment] {
        &self.assignment
    }

    fn check_dims(&self, map: &SpeciesMap) -> Result<()> {
        if self.n_range != map.n_range || self.n_azimuth != map.n_azimuth {
            return Err(Error::Shape(format!(
                "mask is {}x{} but map is {}x{}",
                self.n_range, self.n_azimuth, map.n_range, map.n_azimuth
            )));
        }
        Ok(())
    }
}

/// Builds a swath split: one contiguous band of columns (or rows) of width
/// `round(test_width_frac * extent)` is TEST, the rest TRAIN.
///
/// The band start is drawn uniformly by seed from the in-bounds positions
/// whose labeled test fraction lies within tolerance; if the map has no
/// labeled pixels every position qualifies.
pub fn swath_split(map: &SpeciesMap, params: &SwathParams, seed: u64) -> Result<SplitMask> {
    if !(params.test_width_frac > 0.0 && params.test_width_frac < 1.0) {
        return Err(Error::Parameter(format!(
            "test_width_frac must be in (0,1), got {}",
            params.test_width_frac
        )));
    }
    let (extent, other) = match params.orientation {
        Orientation::Vertical => (map.n_azimuth, map.n_range),
        Orientation::Horizontal => (map.n_range, map.n_azimuth),
    };
    if extent == 0 || other == 0 {
        return Err(Error::Parameter("grid dims must be positive".into()));
    }
    let width = (params.test_width_frac * extent as f64).round() as usize;
    if width == 0 {
        return Err(Error::Parameter(format!(
            "test band rounds to zero columns for extent {extent}"
        )));
    }
    if width >= extent {
        return Err(Error::Parameter(format!(
            "test band of {width} columns does not fit a {extent}-column grid"
        )));
    }

    // Labeled pixels per column (or row) for O(1) per-candidate fractions.
    let mut lane_labeled = vec![0usize; extent];
    let mut total_labeled = 0usize;
    for r in 0..map.n_range {
        for a in 0..map.n_azimuth {
            if map.label(r, a) != 0 {
                let lane = match params.orientation {
                    Orientation::Vertical => a,
                    Orientation::Horizontal => r,
                };
                lane_labeled[lane] += 1;
                total_labeled += 1;
            }
        }
    }
    let mut prefix = vec![0usize; extent + 1];
    for i in 0..extent {
        prefix[i + 1] = prefix[i] + lane_labeled[i];
    }
    let lane_sum = |lo: usize, hi: usize| prefix[hi.min(extent)] - prefix[lo.min(extent)];

    let mut eligible = Vec::new();
    let mut best: Option<(f64, usize)> = None;
    for start in 0..=extent - width {
        if total_labeled == 0 {
            eligible.push(start);
            continue;
        }
        let test = lane_sum(start, start + width);
        let buf_lo = start.saturating_sub(params.buffer_px);
        let buffered = lane_sum(buf_lo, start) + lane_sum(start + width, start + width + params.buffer_px);
        let considered = total_labeled - buffered;
        let frac = if considered == 0 {
            0.0
        } else {
            test as f64 / considered as f64
        };
        let dev = (frac - params.test_width_frac).abs();
        if dev <= params.tolerance {
            eligible.push(start);
        }
        if best.map_or(true, |(d, _)| dev < d) {
            best = Some((dev, start));
        }
    }
    if eligible.is_empty() {
        let (_, s) = best.unwrap();
        let achieved = lane_sum(s, s + width) as f64 / total_labeled.max(1) as f64;
        return Err(Error::Saturation {
            achieved,
            target: params.test_width_frac,
        });
    }

    let mut rng = stream_rng(seed, 0);
    let start = eligible[rng.random_range(0..eligible.len())];

    let mut assignment = vec![Assignment::Train; map.n_range * map.n_azimuth];
    for r in 0..map.n_range {
        for a in 0..map.n_azimuth {
            let lane = match params.orientation {
                Orientation::Vertical => a,
                Orientation::Horizontal => r,
            };
            let idx = r * map.n_azimuth + a;
            if lane >= start && lane < start + width {
                assignment[idx] = Assignment::Test;
            } else if lane + params.buffer_px >= start && lane < start + width + params.buffer_px {
                assignment[idx] = Assignment::Excluded;
            }
        }
    }

    Ok(SplitMask {
        n_range: map.n_range,
        n_azimuth: map.n_azimuth,
        assignment,
        method: SplitMethod::Swath(params.clone()),
        seed,
        n_regions: 1,
    })
}

/// Builds a square split: axis-aligned squares of side
/// `round(square_side_frac * n_azimuth)` are rejection-sampled without
/// overlap (and with at least one pixel of separation, so regions stay
/// distinct components) until the labeled test fraction reaches
/// `target_test_frac - tolerance`.
pub fn square_split(map: &SpeciesMap, params: &SquareParams, seed: u64) -> Result<SplitMask> {
    if !(params.square_side_frac > 0.0 && params.square_side_frac < 1.0) {
        return Err(Error::Parameter(format!(
            "square_side_frac must be in (0,1), got {}",
            params.square_side_frac
        )));
    }
    if !(params.target_test_frac > 0.0 && params.target_test_frac < 1.0) {
        return Err(Error::Parameter(format!(
            "target_test_frac must be in (0,1), got {}",
            params.target_test_frac
        )));
    }
    let side = (params.square_side_frac * map.n_azimuth as f64).round() as usize;
    if side == 0 {
        return Err(Error::Parameter(
            "square side rounds to zero pixels".into(),
        ));
    }
    if side > map.n_range || side > map.n_azimuth {
        return Err(Error::Parameter(format!(
            "square side {side} exceeds grid {}x{}",
            map.n_range, map.n_azimuth
        )));
    }
    let total_labeled = map.n_labeled();
    if total_labeled == 0 {
        return Err(Error::Data(
            "square split needs labeled pixels to meter its test fraction".into(),
        ));
    }

    // 2-D prefix sums over the labeled indicator for O(1) candidate scoring.
    let (nr, na) = (map.n_range, map.n_azimuth);
    let mut pref = vec![0usize; (nr + 1) * (na + 1)];
    for r in 0..nr {
        for a in 0..na {
            let labeled = usize::from(map.label(r, a) != 0);
            pref[(r + 1) * (na + 1) + (a + 1)] = pref[r * (na + 1) + (a + 1)]
                + pref[(r + 1) * (na + 1) + a]
                + labeled
                - pref[r * (na + 1) + a];
        }
    }
    let rect_labeled = |r0: usize, a0: usize, r1: usize, a1: usize| -> usize {
        pref[r1 * (na + 1) + a1] + pref[r0 * (na + 1) + a0]
            - pref[r0 * (na + 1) + a1]
            - pref[r1 * (na + 1) + a0]
    };

    let mut assignment = vec![Assignment::Train; nr * na];
    let mut placed: Vec<(usize, usize)> = Vec::new();
    let mut test_labeled = 0usize;
    let mut excluded_labeled = 0usize;
    let mut rng = stream_rng(seed, 0);
    let gap = 1 + params.buffer_px;
    let mut attempts = 0usize;

    let fraction = |test: usize, excluded: usize| -> f64 {
        let considered = total_labeled - excluded;
        if considered == 0 {
            0.0
        } else {
            test as f64 / considered as f64
        }
    };

    while fraction(test_labeled, excluded_labeled) < params.target_test_frac - params.tolerance {
        if attempts >= params.max_attempts {
            return Err(Error::Saturation {
                achieved: fraction(test_labeled, excluded_labeled),
                target: params.target_test_frac,
            });
        }
        attempts += 1;
        let r0 = rng.random_range(0..=nr - side);
        let a0 = rng.random_range(0..=na - side);
        let overlaps = placed.iter().any(|&(pr, pa)| {
            pr < r0 + side + gap
                && r0 < pr + side + gap
                && pa < a0 + side + gap
                && a0 < pa + side + gap
        });
        if overlaps {
            continue;
        }
        let add = rect_labeled(r0, a0, r0 + side, a0 + side);
        // Skip squares that would overshoot past the upper tolerance bound.
        if fraction(test_labeled + add, excluded_labeled) > params.target_test_frac + params.tolerance
        {
            continue;
        }
        for r in r0..r0 + side {
            for a in a0..a0 + side {
                assignment[r * na + a] = Assignment::Test;
            }
        }
        if params.buffer_px > 0 {
            let rb0 = r0.saturating_sub(params.buffer_px);
            let ab0 = a0.saturating_sub(params.buffer_px);
            let rb1 = (r0 + side + params.buffer_px).min(nr);
            let ab1 = (a0 + side + params.buffer_px).min(na);
            for r in rb0..rb1 {
                for a in ab0..ab1 {
                    let idx = r * na + a;
                    if assignment[idx] == Assignment::Train {
                        assignment[idx] = Assignment::Excluded;
                        if map.label(r, a) != 0 {
                            excluded_labeled += 1;
                        }
                    }
                }
            }
        }
        test_labeled += add;
        placed.push((r0, a0));
    }

    Ok(SplitMask {
        n_range: nr,
        n_azimuth: na,
        assignment,
        method: SplitMethod::Square(params.clone()),
        seed,
        n_regions: placed.len(),
    })
}

/// Per-class pixel tallies of a validated split.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassSplitCount {
    pub train: usize,
    pub test: usize,
    pub excluded: usize,
}

/// Summary statistics of a split against a species map.
#[derive(Debug, Clone)]
pub struct SplitReport {
    /// (class id, tallies), ascending by id, classes present in the map only.
    pub per_class: Vec<(u8, ClassSplitCount)>,
    pub labeled_train: usize,
    pub labeled_test: usize,
    pub labeled_excluded: usize,
    /// Test share of labeled pixels assigned TRAIN or TEST.
    pub achieved_test_frac: f64,
    /// Connected components (4-neighborhood) of the TEST region.
    pub test_components: usize,
    pub warnings: Vec<String>,
}

impl SplitReport {
    pub fn labeled_total(&self) -> usize {
        self.labeled_train + self.labeled_test + self.labeled_excluded
    }
}

/// Counts 4-connected components of the predicate over the grid.
pub(crate) fn connected_components(
    n_range: usize,
    n_azimuth: usize,
    mut is_set: impl FnMut(usize) -> bool,
) -> usize {
    let n = n_range * n_azimuth;
    let mut seen = vec![false; n];
    let mut stack = Vec::new();
    let mut components = 0;
    for start in 0..n {
        if seen[start] || !is_set(start) {
            continue;
        }
        components += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            let (r, a) = (idx / n_azimuth, idx % n_azimuth);
            let mut visit = |nidx: usize| {
                if !seen[nidx] && is_set(nidx) {
                    seen[nidx] = true;
                    stack.push(nidx);
                }
            };
            if r > 0 {
                visit(idx - n_azimuth);
            }
            if r + 1 < n_range {
                visit(idx + n_azimuth);
            }
            if a > 0 {
                visit(idx - 1);
            }
            if a + 1 < n_azimuth {
                visit(idx + 1);
            }
        }
    }
    components
}

/// Tallies a split mask against a species map.
///
/// Only labeled pixels are counted; the achieved fraction is taken over
/// labeled pixels assigned TRAIN or TEST.
pub fn validate_split(mask: &SplitMask, map: &SpeciesMap) -> Result<SplitReport> {
    mask.check_dims(map)?;
    let mut per_class: Vec<ClassSplitCount> = vec![ClassSplitCount::default(); MAX_CLASS_ID as usize + 1];
    for (&l, &a) in map.labels().iter().zip(mask.assignment()) {
        if l == 0 {
            continue;
        }
        let c = &mut per_class[l as usize];
        match a {
            Assignment::Train => c.train += 1,
            Assignment::Test => c.test += 1,
            Assignment::Excluded => c.excluded += 1,
        }
    }
    let mut warnings = Vec::new();
    let mut labeled_train = 0;
    let mut labeled_test = 0;
    let mut labeled_excluded = 0;
    let mut rows = Vec::new();
    for id in 1..=MAX_CLASS_ID {
        let c = per_class[id as usize].clone();
        let total = c.train + c.test + c.excluded;
        if total == 0 {
            continue;
        }
        if c.train == 0 {
            warnings.push(format!("class {id} absent from the train split"));
        }
        if c.test == 0 {
            warnings.push(format!("class {id} absent from the test split"));
        }
        labeled_train += c.train;
        labeled_test += c.test;
        labeled_excluded += c.excluded;
        rows.push((id, c));
    }
    let considered = labeled_train + labeled_test;
    let achieved_test_frac = if considered == 0 {
        0.0
    } else {
        labeled_test as f64 / considered as f64
    };
    let assignment = mask.assignment();
    let test_components = connected_components(mask.n_range, mask.n_azimuth, |idx| {
        assignment[idx] == Assignment::Test
    });
    Ok(SplitReport {
        per_class: rows,
        labeled_train,
        labeled_test,
        labeled_excluded,
        achieved_test_frac,
        test_components,
        warnings,
    })
}

/// Writes a mask as an LBL1 raster (0=EXCLUDED, 1=TRAIN, 2=TEST) plus a
/// `<path>.meta` sidecar recording method, seed, and parameters.
pub fn write_mask(mask: &SplitMask, path: &Path) -> Result<()> {
    let payload: Vec<u8> = mask.assignment.iter().map(|&a| a as u8).collect();
    write_label_raster(mask.n_range, mask.n_azimuth, &payload, path)?;
    let mut meta = String::new();
    writeln!(meta, "method = {}", mask.method.name()).unwrap();
    writeln!(meta, "seed = {}", mask.seed).unwrap();
    writeln!(meta, "n_regions = {}", mask.n_regions).unwrap();
    match &mask.method {
        SplitMethod::Swath(p) => {
            writeln!(meta, "test_width_frac = {}", p.test_width_frac).unwrap();
            let orient = match p.orientation {
                Orientation::Vertical => "vertical",
                Orientation::Horizontal => "horizontal",
            };
            writeln!(meta, "orientation = {orient}").unwrap();
            writeln!(meta, "buffer_px = {}", p.buffer_px).unwrap();
            writeln!(meta, "tolerance = {}", p.tolerance).unwrap();
        }
        SplitMethod::Square(p) => {
            writeln!(meta, "square_side_frac = {}", p.square_side_frac).unwrap();
            writeln!(meta, "target_test_frac = {}", p.target_test_frac).unwrap();
            writeln!(meta, "tolerance = {}", p.tolerance).unwrap();
            writeln!(meta, "buffer_px = {}", p.buffer_px).unwrap();
            writeln!(meta, "max_attempts = {}", p.max_attempts).unwrap();
        }
    }
    std::fs::write(sidecar_path(path), meta)?;
    Ok(())
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    std::path::PathBuf::from(s)
}

/// Reads a mask raster and its sidecar back into a `SplitMask`.
pub fn read_mask(path: &Path) -> Result<SplitMask> {
    let (n_range, n_azimuth, payload) = read_label_raster(path)?;
    let assignment = payload
        .into_iter()
        .map(Assignment::from_code)
        .collect::<Result<Vec<_>>>()?;
    let meta_text = std::fs::read_to_string(sidecar_path(path))
        .map_err(|e| Error::Format(format!("missing mask sidecar: {e}")))?;
    let mut fields = std::collections::BTreeMap::new();
    for line in meta_text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let get = |k: &str| -> Result<&String> {
        fields
            .get(k)
            .ok_or_else(|| Error::Parse(format!("mask sidecar misses key {k:?}")))
    };
    let parse_f = |k: &str| -> Result<f64> {
        get(k)?.parse().map_err(|e| Error::Parse(format!("{k}: {e}")))
    };
    let parse_u = |k: &str| -> Result<usize> {
        get(k)?.parse().map_err(|e| Error::Parse(format!("{k}: {e}")))
    };
    let seed: u64 = get("seed")?
        .parse()
        .map_err(|e| Error::Parse(format!("seed: {e}")))?;
    let n_regions = parse_u("n_regions")?;
    let method = match get("method")?.as_str() {
        "swath" => SplitMethod::Swath(SwathParams {
            test_width_frac: parse_f("test_width_frac")?,
            orientation: match get("orientation")?.as_str() {
                "vertical" => Orientation::Vertical,
                "horizontal" => Orientation::Horizontal,
                o => return Err(Error::Parse(format!("unknown orientation {o:?}"))),
            },
            buffer_px: parse_u("buffer_px")?,
            tolerance: parse_f("tolerance")?,
        }),
        "square" => SplitMethod::Square(SquareParams {
            square_side_frac: parse_f("square_side_frac")?,
            target_test_frac: parse_f("target_test_frac")?,
            tolerance: parse_f("tolerance")?,
            buffer_px: parse_u("buffer_px")?,
            max_attempts: parse_u("max_attempts")?,
        }),
        m => return Err(Error::Parse(format!("unknown split method {m:?}"))),
    };
    Ok(SplitMask {
        n_range,
        n_azimuth,
        assignment,
        method,
        seed,
        n_regions,
    })
}
