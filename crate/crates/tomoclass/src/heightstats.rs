//! LiDAR-referenced canopy height statistics: per class/split summary rows,
//! kernel density curves for violin plots, and the tomographic height
//! estimator used to compute height RMSE against the LiDAR reference.

use std::fmt::Write as _;
use std::path::Path;

use crate::cube::{HeightAxis, HeightRaster, SpeciesMap, TomoCube, MAX_CLASS_ID};
use crate::error::{Error, Result};
use crate::features::SplitTag;
use crate::geosplit::{Assignment, SplitMask};

/// Fisher excess kurtosis with population moments: `m4 / m2^2 - 3`.
pub fn excess_kurtosis(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < 4 {
        return Err(Error::Statistic(format!(
            "kurtosis needs at least 4 samples, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let m2 = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
    if m2 <= 0.0 {
        return Err(Error::Statistic("kurtosis undefined at zero variance".into()));
    }
    let m4 = samples.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / nf;
    Ok(m4 / (m2 * m2) - 3.0)
}

/// Per class-and-split height summary (Test rows first, classes ascending
/// within each split block). Statistics that are undefined for the group
/// stay `None`.
#[derive(Debug, Clone)]
pub struct HeightStatsRow {
    pub class_id: u8,
    pub class_name: String,
    pub split: SplitTag,
    pub n: usize,
    pub min_m: Option<f64>,
    pub max_m: Option<f64>,
    pub mean_m: Option<f64>,
    /// Population standard deviation.
    pub std_m: Option<f64>,
    /// Needs n >= 4 and nonzero variance.
    pub excess_kurtosis: Option<f64>,
    /// Root mean square of (estimated - reference) height over the group's
    /// pixels where the estimate is valid.
    pub rmse_m: Option<f64>,
    /// Pixels entering the RMSE.
    pub rmse_n: usize,
}

/// Collects per-(class, split) height statistics over valid CHM pixels.
///
/// `est` is the tomographic height estimate on the same grid; its deviation
/// from the CHM yields the RMSE column.
pub fn class_height_stats(
    chm: &HeightRaster,
    map: &SpeciesMap,
    mask: &SplitMask,
    est: &HeightRaster,
) -> Result<Vec<HeightStatsRow>> {
    for (nr, na, what) in [
        (map.n_range, map.n_azimuth, "map"),
        (mask.n_range, mask.n_azimuth, "mask"),
        (est.n_range, est.n_azimuth, "estimate"),
    ] {
        if nr != chm.n_range || na != chm.n_azimuth {
            return Err(Error::Shape(format!(
                "{what} is {nr}x{na} but the height raster is {}x{}",
                chm.n_range, chm.n_azimuth
            )));
        }
    }

    let mut rows = Vec::new();
    for split in [SplitTag::Test, SplitTag::Train] {
        let want = match split {
            SplitTag::Train => Assignment::Train,
            SplitTag::Test => Assignment::Test,
        };
        for class in 1..=MAX_CLASS_ID {
            let mut heights = Vec::new();
            let mut sq_err = 0.0;
            let mut rmse_n = 0usize;
            for r in 0..chm.n_range {
                for a in 0..chm.n_azimuth {
                    if map.label(r, a) != class || mask.get(r, a) != want {
                        continue;
                    }
                    let Some(h) = chm.get(r, a) else { continue };
                    heights.push(h);
                    if let Some(e) = est.get(r, a) {
                        sq_err += (e - h) * (e - h);
                        rmse_n += 1;
                    }
                }
            }
            let n = heights.len();
            let (min_m, max_m, mean_m, std_m) = if n == 0 {
                (None, None, None, None)
            } else {
                let min = heights.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = heights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mean = heights.iter().sum::<f64>() / n as f64;
                let var = heights.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / n as f64;
                (Some(min), Some(max), Some(mean), Some(var.sqrt()))
            };
            rows.push(HeightStatsRow {
                class_id: class,
                class_name: map
                    .entry(class)
                    .map(|e| e.name.to_string())
                    .unwrap_or_else(|| format!("class {class}")),
                split,
                n,
                min_m,
                max_m,
                mean_m,
                std_m,
                excess_kurtosis: excess_kurtosis(&heights).ok(),
                rmse_m: if rmse_n > 0 {
                    Some((sq_err / rmse_n as f64).sqrt())
                } else {
                    None
                },
                rmse_n,
            });
        }
    }
    Ok(rows)
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.2}"),
        None => "n/a".into(),
    }
}

/// Renders the stats rows as an aligned text table.
pub fn render_stats_text(rows: &[HeightStatsRow]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<50}{:>9}{:>9}{:>9}{:>13}{:>10}{:>10}  {:<6}",
        "Tree Name", "Min (m)", "Max (m)", "Mean (m)", "Std Dev (m)", "Kurtosis", "RMSE (m)", "Split"
    )
    .unwrap();
    for r in rows {
        writeln!(
            out,
            "{:<50}{:>9}{:>9}{:>9}{:>13}{:>10}{:>10}  {:<6}",
            r.class_name,
            fmt_opt(r.min_m),
            fmt_opt(r.max_m),
            fmt_opt(r.mean_m),
            fmt_opt(r.std_m),
            fmt_opt(r.excess_kurtosis),
            fmt_opt(r.rmse_m),
            r.split.name()
        )
        .unwrap();
    }
    out
}

fn csv_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}

/// Writes the stats rows as CSV at full precision.
pub fn write_stats_csv(rows: &[HeightStatsRow], path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "class,name,split,n,min_m,max_m,mean_m,std_m,excess_kurtosis,rmse_m,rmse_n").unwrap();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.class_id,
            r.class_name,
            r.split.name(),
            r.n,
            csv_opt(r.min_m),
            csv_opt(r.max_m),
            csv_opt(r.mean_m),
            csv_opt(r.std_m),
            csv_opt(r.excess_kurtosis),
            csv_opt(r.rmse_m),
            r.rmse_n
        )
        .unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Kernel density curve over an ascending height grid; the trapezoidal
/// integral over the grid is 1.
#[derive(Debug, Clone)]
pub struct DensityCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth_m: f64,
}

impl DensityCurve {
    /// Trapezoidal integral over the grid.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }
}

fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 1..grid.len() {
        s += 0.5 * (values[i] + values[i - 1]) * (grid[i] - grid[i - 1]);
    }
    s
}

/// Type-7 quantile (linear interpolation between order statistics) of a
/// sorted slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Gaussian KDE with Silverman's bandwidth
/// `h = 0.9 min(std, IQR/1.34) n^(-1/5)` (sample standard deviation), on a
/// `grid_points`-sample grid spanning `[min - 3h, max + 3h]`. The curve is
/// normalized so its trapezoidal integral over the grid is exactly 1.
pub fn kde(samples: &[f64], grid_points: usize) -> Result<DensityCurve> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Statistic(format!("kde needs at least 2 samples, got {n}")));
    }
    if grid_points < 2 {
        return Err(Error::Parameter("kde needs at least 2 grid points".into()));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let std = var.sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let h = 0.9 * std.min(iqr / 1.34) * nf.powf(-0.2);
    if !(h > 0.0) {
        return Err(Error::Bandwidth(format!(
            "silverman bandwidth degenerated to {h} (std {std}, iqr {iqr})"
        )));
    }

    let lo = sorted[0] - 3.0 * h;
    let hi = sorted[n - 1] + 3.0 * h;
    let step = (hi - lo) / (grid_points - 1) as f64;
    let grid: Vec<f64> = (0..grid_points).map(|i| lo + i as f64 * step).collect();
    let norm = 1.0 / (nf * h * (2.0 * std::f64::consts::PI).sqrt());
    let mut density: Vec<f64> = grid
        .iter()
        .map(|&g| {
            let mut s = 0.0;
            for &x in samples {
                let z = (g - x) / h;
                s += (-0.5 * z * z).exp();
            }
            s * norm
        })
        .collect();
    let integral = trapezoid(&grid, &density);
    for d in &mut density {
        *d /= integral;
    }
    Ok(DensityCurve {
        grid,
        density,
        bandwidth_m: h,
    })
}

/// Top-of-canopy estimate from a vertical intensity profile.
///
/// With `P` the peak bin intensity, the estimate is the top edge of the
/// highest bin whose intensity reaches `P * 10^(rel_threshold_db / 10)`;
/// an all-zero (or invalid) profile yields `None`.
pub fn estimate_height(profile: &[f64], axis: &HeightAxis, rel_threshold_db: f64) -> Option<f64> {
    debug_assert_eq!(profile.len(), axis.n_bins);
    let peak = profile.iter().cloned().fold(0.0f64, f64::max);
    if !(peak > 0.0) {
        return None;
    }
    let threshold = peak * 10f64.powf(rel_threshold_db / 10.0);
    for (bin, &v) in profile.iter().enumerate().rev() {
        if v >= threshold {
            return Some(axis.bin_top(bin));
        }
    }
    None
}

/// Which vertical profile the per-pixel estimator reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileSource {
    /// First channel in the cube's channel list (the default).
    FirstChannel,
    Channel(crate::cube::PolChannel),
    /// Mean over all channels.
    ChannelMean,
}

/// Applies `estimate_height` to every valid pixel of a cube.
pub fn estimate_height_raster(
    cube: &TomoCube,
    source: ProfileSource,
    rel_threshold_db: f64,
) -> Result<HeightRaster> {
    let axis = cube.axis();
    let channel = match source {
        ProfileSource::FirstChannel => Some(0),
        ProfileSource::Channel(ch) => Some(cube.channel_index(ch).ok_or_else(|| {
            Error::Channel(format!("cube has no channel {}", ch.name()))
        })?),
        ProfileSource::ChannelMean => None,
    };
    let mut heights = vec![f32::NAN; cube.n_range * cube.n_azimuth];
    for r in 0..cube.n_range {
        for a in 0..cube.n_azimuth {
            if !cube.is_valid(r, a) {
                continue;
            }
            let profile = match channel {
                Some(c) => cube.profile(r, a, c),
                None => cube.mean_profile(r, a),
            };
            if let Some(h) = estimate_height(&profile, &axis, rel_threshold_db) {
                heights[r * cube.n_azimuth + a] = h as f32;
            }
        }
    }
    HeightRaster::new(cube.n_range, cube.n_azimuth, heights)
}

/// Box-plot statistics with 1.5 IQR whiskers (type-7 quartiles).
#[derive(Debug, Clone, PartialEq)]
pub struct BoxStats {
    pub min: f64,
    pub whisker_lo: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_hi: f64,
    pub max: f64,
}

/// Computes box statistics; whiskers reach the most extreme samples within
/// 1.5 IQR of the quartiles.
pub fn box_stats(samples: &[f64]) -> Result<BoxStats> {
    if samples.is_empty() {
        return Err(Error::Data("box stats need at least one sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.50);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    let whisker_lo = sorted
        .iter()
        .cloned()
        .find(|&v| v >= lo_fence)
        .unwrap_or(sorted[0]);
    let whisker_hi = sorted
        .iter()
        .rev()
        .cloned()
        .find(|&v| v <= hi_fence)
        .unwrap_or(sorted[sorted.len() - 1]);
    Ok(BoxStats {
        min: sorted[0],
        whisker_lo,
        q1,
        median,
        q3,
        whisker_hi,
        max: sorted[sorted.len() - 1],
    })
}

/// Per class/split violin data: box statistics plus the KDE curve when the
/// sample spread allows one.
#[derive(Debug, Clone)]
pub struct ViolinBlock {
    pub class_id: u8,
    pub split: SplitTag,
    pub n: usize,
    pub box_stats: Option<BoxStats>,
    pub curve: Option<DensityCurve>,
    /// Set when the KDE was skipped for degenerate spread.
    pub density_degenerate: bool,
}

/// Gathers violin data per (class, split) from the CHM; blocks come in
/// class-id order with Test before Train inside each class.
pub fn violin_data(
    chm: &HeightRaster,
    map: &SpeciesMap,
    mask: &SplitMask,
    grid_points: usize,
) -> Result<Vec<ViolinBlock>> {
    let mut blocks = Vec::new();
    for class in 1..=MAX_CLASS_ID {
        for split in [SplitTag::Test, SplitTag::Train] {
            let want = match split {
                SplitTag::Train => Assignment::Train,
                SplitTag::Test => Assignment::Test,
            };
            let mut heights = Vec::new();
            for r in 0..chm.n_range {
                for a in 0..chm.n_azimuth {
                    if map.label(r, a) == class && mask.get(r, a) == want {
                        if let Some(h) = chm.get(r, a) {
                            heights.push(h);
                        }
                    }
                }
            }
            if heights.is_empty() {
                continue;
            }
            let curve = kde(&heights, grid_points);
            blocks.push(ViolinBlock {
                class_id: class,
                split,
                n: heights.len(),
                density_degenerate: curve.is_err(),
                curve: curve.ok(),
                box_stats: box_stats(&heights).ok(),
            });
        }
    }
    Ok(blocks)
}

/// Writes violin data as long-format CSV: one `box` record per statistic and
/// one `density` record per grid point, plus a `flag` record when the KDE
/// was degenerate.
pub fn violin_export(blocks: &[ViolinBlock], path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "class,split,record,key,value").unwrap();
    for b in blocks {
        writeln!(out, "{},{},meta,n,{}", b.class_id, b.split.name(), b.n).unwrap();
        if let Some(s) = &b.box_stats {
            for (key, v) in [
                ("min", s.min),
                ("whisker_lo", s.whisker_lo),
                ("q1", s.q1),
                ("median", s.median),
                ("q3", s.q3),
                ("whisker_hi", s.whisker_hi),
                ("max", s.max),
            ] {
                writeln!(out, "{},{},box,{},{}", b.class_id, b.split.name(), key, v).unwrap();
            }
        }
        if b.density_degenerate {
            writeln!(out, "{},{},flag,density_degenerate,1", b.class_id, b.split.name()).unwrap();
        }
        if let Some(c) = &b.curve {
            writeln!(
                out,
                "{},{},meta,bandwidth_m,{}",
                b.class_id,
                b.split.name(),
                c.bandwidth_m
            )
            .unwrap();
            for (g, d) in c.grid.iter().zip(&c.density) {
                writeln!(out, "{},{},density,{},{}", b.class_id, b.split.name(), g, d).unwrap();
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}
