//! Deterministic synthetic scene generator: species map from seeded Voronoi
//! patches, canopy heights per class, a Gaussian-bump tomographic cube per
//! heading with multiplicative noise, and LiDAR points at canopy height.
//!
//! Class structure of the defaults: classes 1, 4, 5, and 8 occupy disjoint
//! height ranges and are easy; classes 2, 3, 6, and 7 share one height
//! distribution and differ only in the direction of their per-channel
//! amplitude vector (all four share the same norm), so they overlap heavily
//! once noise is on while staying exactly separable noiseless. The cluster
//! classes sit at one constant canopy height, which keeps their vertical
//! signatures identical and the ambiguity purely polarimetric. The canopy
//! return of a pixel is concentrated at the center of the height bin that
//! holds its canopy top.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cube::{
    reference_proportions, write_cube, write_lidar, write_species_map, Heading, HeightAxis,
    HeightRaster, LidarPoints, PolChannel, SpeciesMap, TomoCube,
};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Height and per-channel amplitude signature of one class.
#[derive(Debug, Clone, Copy)]
pub struct ClassProfile {
    pub mean_height_m: f64,
    pub height_spread_m: f64,
    /// Per-channel bump amplitude, ordered as the scene's channel list.
    pub amplitude: [f64; 3],
}

/// Full configuration of a synthetic scene.
#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub n_range: usize,
    pub n_azimuth: usize,
    pub n_height: usize,
    pub height_min_m: f64,
    pub height_step_m: f64,
    pub channels: Vec<PolChannel>,
    pub band: String,
    /// Class shares over the grid; must sum to 1.
    pub proportions: [f64; 8],
    pub class_profiles: [ClassProfile; 8],
    /// Width of the vertical return bump, meters.
    pub bump_sigma_m: f64,
    /// Expected pixels per Voronoi patch.
    pub patch_cells: usize,
    /// Multiplicative log-normal noise level on voxel intensities.
    pub noise: f64,
    pub lidar_points_per_pixel: usize,
    pub seed: u64,
}

/// Normalizes an amplitude direction to the common signature norm.
fn signature(direction: [f64; 3], norm: f64) -> [f64; 3] {
    let len = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    [
        direction[0] / len * norm,
        direction[1] / len * norm,
        direction[2] / len * norm,
    ]
}

impl Default for SceneConfig {
    fn default() -> Self {
        const NORM: f64 = 1.8;
        let profile = |mean: f64, spread: f64, dir: [f64; 3]| ClassProfile {
            mean_height_m: mean,
            height_spread_m: spread,
            amplitude: signature(dir, NORM),
        };
        SceneConfig {
            n_range: 168,
            n_azimuth: 120,
            n_height: 36,
            height_min_m: -10.0,
            height_step_m: 2.0,
            channels: PolChannel::ALL.to_vec(),
            band: "P".into(),
            proportions: reference_proportions(),
            class_profiles: [
                profile(35.0, 1.8, [3.0, 1.1, 2.1]),
                profile(17.5, 0.0, [1.25, 1.0, 0.8]),
                profile(17.5, 0.0, [1.0, 1.25, 0.8]),
                profile(8.0, 1.5, [1.9, 0.55, 1.5]),
                profile(26.0, 1.5, [0.9, 2.3, 1.2]),
                profile(17.5, 0.0, [0.8, 1.0, 1.25]),
                profile(17.5, 0.0, [1.0, 0.8, 1.25]),
                profile(44.0, 1.5, [2.3, 0.5, 1.7]),
            ],
            bump_sigma_m: 0.8,
            patch_cells: 256,
            noise: 0.3,
            lidar_points_per_pixel: 2,
            seed: 7,
        }
    }
}

impl SceneConfig {
    /// Survey-scale grid (326 x 840) with otherwise default settings.
    pub fn full_scale() -> Self {
        SceneConfig {
            n_range: 326,
            n_azimuth: 840,
            ..SceneConfig::default()
        }
    }

    pub fn axis(&self) -> HeightAxis {
        HeightAxis {
            min_m: self.height_min_m,
            step_m: self.height_step_m,
            n_bins: self.n_height,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_range == 0 || self.n_azimuth == 0 || self.n_height == 0 {
            return Err(Error::Parameter("scene dims must be positive".into()));
        }
        if self.channels.is_empty() || self.channels.len() > 3 {
            return Err(Error::Parameter("scene needs 1..=3 channels".into()));
        }
        let sum: f64 = self.proportions.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Parameter(format!(
                "class proportions sum to {sum}, expected 1"
            )));
        }
        if self.proportions.iter().any(|&p| p < 0.0) {
            return Err(Error::Parameter("class proportions must be nonnegative".into()));
        }
        let n_px = self.n_range * self.n_azimuth;
        for (i, &p) in self.proportions.iter().enumerate() {
            if p > 0.0 && (p * n_px as f64).round() < 1.0 {
                return Err(Error::Parameter(format!(
                    "class {} share {p} yields no pixels on a {n_px}-pixel grid",
                    i + 1
                )));
            }
        }
        let axis = self.axis();
        for (i, pr) in self.class_profiles.iter().enumerate() {
            if self.proportions[i] == 0.0 {
                continue;
            }
            let lo = pr.mean_height_m - 2.0 * pr.height_spread_m;
            let hi = pr.mean_height_m + 2.0 * pr.height_spread_m;
            if lo < axis.min_m + axis.step_m || hi > axis.max_m() - axis.step_m {
                return Err(Error::Parameter(format!(
                    "class {} heights [{lo}, {hi}] leave the cube's height axis",
                    i + 1
                )));
            }
        }
        if !(self.bump_sigma_m > 0.0) {
            return Err(Error::Parameter("bump sigma must be positive".into()));
        }
        if self.noise < 0.0 {
            return Err(Error::Parameter("noise level must be nonnegative".into()));
        }
        if self.patch_cells == 0 || self.lidar_points_per_pixel == 0 {
            return Err(Error::Parameter(
                "patch granularity and LiDAR density must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A generated scene with its ground truth.
#[derive(Debug, Clone)]
pub struct Scene {
    pub nw: TomoCube,
    pub se: TomoCube,
    pub map: SpeciesMap,
    pub lidar: LidarPoints,
    /// Unsnapped canopy height per pixel.
    pub true_height: HeightRaster,
}

/// Seeded Voronoi species map: sites drawn uniformly, cells assigned to the
/// class with the largest remaining pixel deficit (largest cells first).
fn voronoi_labels(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let (nr, na) = (cfg.n_range, cfg.n_azimuth);
    let n_px = nr * na;
    let n_sites = (n_px / cfg.patch_cells).max(16).min(n_px);
    let mut sites: Vec<(usize, usize)> = Vec::with_capacity(n_sites);
    while sites.len() < n_sites {
        let cand = (rng.random_range(0..nr), rng.random_range(0..na));
        if !sites.contains(&cand) {
            sites.push(cand);
        }
    }

    let mut cell_of_px = vec![0u32; n_px];
    let mut cell_sizes = vec![0usize; n_sites];
    for r in 0..nr {
        for a in 0..na {
            let mut best = 0usize;
            let mut best_d = usize::MAX;
            for (s, &(sr, sa)) in sites.iter().enumerate() {
                let dr = sr.abs_diff(r);
                let da = sa.abs_diff(a);
                let d = dr * dr + da * da;
                if d < best_d {
                    best_d = d;
                    best = s;
                }
            }
            cell_of_px[r * na + a] = best as u32;
            cell_sizes[best] += 1;
        }
    }

    // Deficit-greedy class assignment, biggest cells first so the leftovers
    // are small and frequencies land close to the configured shares.
    let mut order: Vec<usize> = (0..n_sites).collect();
    order.sort_by_key(|&s| (std::cmp::Reverse(cell_sizes[s]), s));
    let targets: Vec<f64> = cfg.proportions.iter().map(|p| p * n_px as f64).collect();
    let mut assigned = [0f64; 8];
    let mut class_of_cell = vec![0u8; n_sites];
    for &cell in &order {
        let mut best_k = 0usize;
        let mut best_deficit = f64::NEG_INFINITY;
        for k in 0..8 {
            if cfg.proportions[k] == 0.0 {
                continue;
            }
            let deficit = targets[k] - assigned[k];
            if deficit > best_deficit {
                best_deficit = deficit;
                best_k = k;
            }
        }
        class_of_cell[cell] = (best_k + 1) as u8;
        assigned[best_k] += cell_sizes[cell] as f64;
    }

    cell_of_px
        .iter()
        .map(|&c| class_of_cell[c as usize])
        .collect()
}

fn synth_cube(
    cfg: &SceneConfig,
    labels: &[u8],
    heights: &[f64],
    heading: Heading,
    rng: &mut ChaCha8Rng,
) -> Result<TomoCube> {
    let (nr, na) = (cfg.n_range, cfg.n_azimuth);
    let axis = cfg.axis();
    let n_ch = cfg.channels.len();
    let block = cfg.n_height * n_ch;
    // Each heading sees a partial, overlapping azimuth range so merging the
    // two is meaningful.
    let (lo, hi) = match heading {
        Heading::Nw => (0, (0.65 * na as f64).ceil() as usize),
        Heading::Se => ((0.35 * na as f64).floor() as usize, na),
        Heading::Merged => (0, na),
    };
    let mut intensity = vec![f32::NAN; nr * na * block];
    let mut valid = vec![false; nr * na];
    let inv_two_sigma2 = 1.0 / (2.0 * cfg.bump_sigma_m * cfg.bump_sigma_m);
    // Log-normal with unit mean: exp(noise z - noise^2/2).
    let noise_shift = 0.5 * cfg.noise * cfg.noise;
    for r in 0..nr {
        for a in 0..na {
            if a < lo || a >= hi {
                continue;
            }
            let px = r * na + a;
            valid[px] = true;
            let class = labels[px] as usize - 1;
            let amp = &cfg.class_profiles[class].amplitude;
            let snap = axis.bin_center(axis.bin_of(heights[px]));
            let out = &mut intensity[px * block..(px + 1) * block];
            for bin in 0..cfg.n_height {
                let d = axis.bin_center(bin) - snap;
                let base = (-d * d * inv_two_sigma2).exp();
                for (c, slot) in out[bin * n_ch..(bin + 1) * n_ch].iter_mut().enumerate() {
                    let v = if cfg.noise > 0.0 {
                        let z: f64 = StandardNormal.sample(rng);
                        amp[c] * base * (cfg.noise * z - noise_shift).exp()
                    } else {
                        amp[c] * base
                    };
                    *slot = v as f32;
                }
            }
        }
    }
    TomoCube::new(
        nr,
        na,
        cfg.n_height,
        cfg.channels.clone(),
        cfg.height_min_m,
        cfg.height_step_m,
        cfg.band.clone(),
        heading,
        intensity,
        valid,
    )
}

/// Generates the full scene: NW/SE cube pair, species map, LiDAR points, and
/// the true-height raster. Byte-deterministic for a fixed config.
pub fn generate_scene(cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let (nr, na) = (cfg.n_range, cfg.n_azimuth);
    let axis = cfg.axis();

    let labels = voronoi_labels(cfg, &mut stream_rng(cfg.seed, 0));
    let map = SpeciesMap::new(nr, na, labels.clone())?;

    // Canopy heights: truncated normal per class, clamped to +-2 spreads and
    // the interior of the height axis.
    let mut height_rng = stream_rng(cfg.seed, 1);
    let heights: Vec<f64> = labels
        .iter()
        .map(|&l| {
            let p = &cfg.class_profiles[l as usize - 1];
            let z: f64 = StandardNormal.sample(&mut height_rng);
            let h = p.mean_height_m + p.height_spread_m * z.clamp(-2.0, 2.0);
            h.clamp(axis.min_m + axis.step_m, axis.max_m() - axis.step_m)
        })
        .collect();

    let nw = synth_cube(cfg, &labels, &heights, Heading::Nw, &mut stream_rng(cfg.seed, 2))?;
    let se = synth_cube(cfg, &labels, &heights, Heading::Se, &mut stream_rng(cfg.seed, 3))?;

    let mut lidar_rng = stream_rng(cfg.seed, 4);
    let mut points = Vec::with_capacity(nr * na * cfg.lidar_points_per_pixel);
    for r in 0..nr {
        for a in 0..na {
            let h = heights[r * na + a];
            for _ in 0..cfg.lidar_points_per_pixel {
                let dx: f64 = lidar_rng.random();
                let dy: f64 = lidar_rng.random();
                let dz: f64 = lidar_rng.random();
                points.push((a as f64 + dx, r as f64 + dy, h + dz - 0.5));
            }
        }
    }

    let true_height = HeightRaster::new(nr, na, heights.iter().map(|&h| h as f32).collect())?;

    Ok(Scene {
        nw,
        se,
        map,
        lidar: LidarPoints::new(points)?,
        true_height,
    })
}

/// Writes all scene artifacts into a directory: `nw.tomo`, `se.tomo`,
/// `labels.lbl`, `lidar.txt`, and the ground-truth sidecar
/// `true_height.csv` (y,x,height_m rows).
pub fn write_scene(scene: &Scene, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_cube(&scene.nw, &dir.join("nw.tomo"))?;
    write_cube(&scene.se, &dir.join("se.tomo"))?;
    write_species_map(&scene.map, &dir.join("labels.lbl"))?;
    write_lidar(&scene.lidar, &dir.join("lidar.txt"))?;
    let mut csv = String::from("y,x,height_m\n");
    for r in 0..scene.true_height.n_range {
        for a in 0..scene.true_height.n_azimuth {
            if let Some(h) = scene.true_height.get(r, a) {
                csv.push_str(&format!("{r},{a},{h}\n"));
            }
        }
    }
    std::fs::write(dir.join("true_height.csv"), csv)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::merge_headings;
    use crate::heightstats::{estimate_height, estimate_height_raster, ProfileSource};

    fn bits(v: &[f32]) -> Vec<u32> {
        v.iter().map(|x| x.to_bits()).collect()
    }

    fn desk_cfg() -> SceneConfig {
        // Smaller than the default desk grid to keep unit tests snappy.
        SceneConfig {
            n_range: 84,
            n_azimuth: 60,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn default_scene_matches_reference_class_shares() {
        let cfg = SceneConfig::default();
        let scene = generate_scene(&cfg).unwrap();
        let n_px = (cfg.n_range * cfg.n_azimuth) as f64;
        let counts = scene.map.class_counts();
        let share = |id: u8| -> f64 {
            counts
                .iter()
                .find(|(c, _)| *c == id)
                .map(|(_, n)| *n as f64 / n_px)
                .unwrap_or(0.0)
        };
        assert!(
            (share(1) - 0.6034).abs() <= 0.03,
            "class 1 share {}",
            share(1)
        );
        for id in 1..=8u8 {
            let want = cfg.proportions[id as usize - 1];
            assert!(
                (share(id) - want).abs() <= 0.03,
                "class {id} share {} vs {want}",
                share(id)
            );
        }
    }

    #[test]
    fn noiseless_single_class_peaks_in_the_bin_holding_the_height() {
        let mut proportions = [0.0; 8];
        proportions[0] = 1.0;
        let mut cfg = desk_cfg();
        cfg.noise = 0.0;
        cfg.proportions = proportions;
        cfg.class_profiles[0] = ClassProfile {
            mean_height_m: 20.0,
            height_spread_m: 0.0,
            amplitude: cfg.class_profiles[0].amplitude,
        };
        let scene = generate_scene(&cfg).unwrap();
        let cube = merge_headings(&scene.nw, &scene.se).unwrap();
        let axis = cube.axis();
        let want_bin = axis.bin_of(20.0);
        assert_eq!(axis.bin_center(want_bin), 21.0);
        for r in 0..cube.n_range {
            for a in 0..cube.n_azimuth {
                let profile = cube.profile(r, a, 0);
                let argmax = profile
                    .iter()
                    .enumerate()
                    .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                    .unwrap()
                    .0;
                assert_eq!(argmax, want_bin, "pixel ({r},{a})");
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = desk_cfg();
        let a = generate_scene(&cfg).unwrap();
        let b = generate_scene(&cfg).unwrap();
        assert_eq!(a.map.labels(), b.map.labels());
        assert_eq!(bits(a.nw.intensity()), bits(b.nw.intensity()));
        assert_eq!(bits(a.se.intensity()), bits(b.se.intensity()));
        assert_eq!(a.lidar.points, b.lidar.points);
        assert_eq!(bits(a.true_height.heights()), bits(b.true_height.heights()));
    }

    #[test]
    fn different_seeds_differ() {
        let cfg = desk_cfg();
        let other = SceneConfig { seed: 8, ..desk_cfg() };
        let a = generate_scene(&cfg).unwrap();
        let b = generate_scene(&other).unwrap();
        assert_ne!(bits(a.nw.intensity()), bits(b.nw.intensity()));
    }

    #[test]
    fn noiseless_estimates_recover_heights_within_one_bin() {
        let mut cfg = desk_cfg();
        cfg.noise = 0.0;
        let scene = generate_scene(&cfg).unwrap();
        let cube = merge_headings(&scene.nw, &scene.se).unwrap();
        let est = estimate_height_raster(&cube, ProfileSource::FirstChannel, -3.0).unwrap();
        let mut checked = 0;
        for r in 0..cube.n_range {
            for a in 0..cube.n_azimuth {
                let (Some(e), Some(t)) = (est.get(r, a), scene.true_height.get(r, a)) else {
                    continue;
                };
                checked += 1;
                assert!(
                    (e - t).abs() <= 2.0 + 1e-9,
                    "pixel ({r},{a}): estimate {e} vs truth {t}"
                );
            }
        }
        assert_eq!(checked, cube.n_range * cube.n_azimuth);
    }

    #[test]
    fn merged_cube_covers_every_pixel() {
        let scene = generate_scene(&desk_cfg()).unwrap();
        // Headings only cover parts of the scene.
        assert!(scene.nw.valid_mask().iter().any(|&v| !v));
        assert!(scene.se.valid_mask().iter().any(|&v| !v));
        let merged = merge_headings(&scene.nw, &scene.se).unwrap();
        assert!(merged.valid_mask().iter().all(|&v| v));
    }

    #[test]
    fn coarse_patches_cluster_neighbors() {
        let cfg = SceneConfig {
            patch_cells: 600,
            ..SceneConfig::default()
        };
        let scene = generate_scene(&cfg).unwrap();
        let map = &scene.map;
        let mut same = 0usize;
        let mut pairs = 0usize;
        for r in 0..map.n_range {
            for a in 0..map.n_azimuth {
                if a + 1 < map.n_azimuth {
                    pairs += 1;
                    same += usize::from(map.label(r, a) == map.label(r, a + 1));
                }
                if r + 1 < map.n_range {
                    pairs += 1;
                    same += usize::from(map.label(r, a) == map.label(r + 1, a));
                }
            }
        }
        let agreement = same as f64 / pairs as f64;
        assert!(agreement >= 0.90, "neighbor agreement {agreement}");
    }

    #[test]
    fn noiseless_scene_is_centroid_separable() {
        // Sanity floor: nearest class centroid over noiseless profiles
        // classifies every pixel correctly.
        let mut cfg = desk_cfg();
        cfg.noise = 0.0;
        let scene = generate_scene(&cfg).unwrap();
        let cube = merge_headings(&scene.nw, &scene.se).unwrap();
        let n_ch = cube.n_channels();
        let dim = cube.n_height * n_ch;
        let mut centroids = vec![vec![0.0f64; dim]; 8];
        let mut counts = [0usize; 8];
        let feature = |r: usize, a: usize| -> Vec<f64> {
            let block = cube.pixel_block(r, a);
            block.iter().map(|&v| f64::from(v)).collect()
        };
        for r in 0..cube.n_range {
            for a in 0..cube.n_azimuth {
                let k = scene.map.label(r, a) as usize - 1;
                counts[k] += 1;
                for (c, v) in centroids[k].iter_mut().zip(feature(r, a)) {
                    *c += v;
                }
            }
        }
        for (c, n) in centroids.iter_mut().zip(counts) {
            if n > 0 {
                for v in c.iter_mut() {
                    *v /= n as f64;
                }
            }
        }
        let mut wrong = 0usize;
        for r in 0..cube.n_range {
            for a in 0..cube.n_azimuth {
                let x = feature(r, a);
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (k, c) in centroids.iter().enumerate() {
                    if counts[k] == 0 {
                        continue;
                    }
                    let d: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                    if d < best_d {
                        best_d = d;
                        best = k;
                    }
                }
                if (best + 1) as u8 != scene.map.label(r, a) {
                    wrong += 1;
                }
            }
        }
        assert_eq!(wrong, 0, "{wrong} noiseless pixels misclassified");
    }

    #[test]
    fn lidar_density_and_height_band() {
        let cfg = desk_cfg();
        let scene = generate_scene(&cfg).unwrap();
        assert_eq!(
            scene.lidar.len(),
            cfg.n_range * cfg.n_azimuth * cfg.lidar_points_per_pixel
        );
        for &(x, y, z) in &scene.lidar.points {
            let (r, a) = (y.floor() as usize, x.floor() as usize);
            let h = scene.true_height.get(r, a).unwrap();
            assert!((z - h).abs() <= 0.5 + 1e-9);
        }
    }

    #[test]
    fn infeasible_proportions_are_rejected() {
        let cfg = SceneConfig {
            n_range: 2,
            n_azimuth: 2,
            ..SceneConfig::default()
        };
        assert!(matches!(
            generate_scene(&cfg),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn scene_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SceneConfig {
            n_range: 24,
            n_azimuth: 20,
            patch_cells: 16,
            ..SceneConfig::default()
        };
        let scene = generate_scene(&cfg).unwrap();
        write_scene(&scene, dir.path()).unwrap();
        let nw = crate::cube::read_cube(&dir.path().join("nw.tomo")).unwrap();
        assert_eq!(bits(nw.intensity()), bits(scene.nw.intensity()));
        let map = crate::cube::read_species_map(&dir.path().join("labels.lbl")).unwrap();
        assert_eq!(map.labels(), scene.map.labels());
        let lidar = crate::cube::read_lidar(&dir.path().join("lidar.txt")).unwrap();
        assert_eq!(lidar.len(), scene.lidar.len());
        let sidecar = std::fs::read_to_string(dir.path().join("true_height.csv")).unwrap();
        assert!(sidecar.starts_with("y,x,height_m\n"));
    }

    #[test]
    fn estimate_height_interface_is_consistent_with_profiles() {
        // The raster path must agree with calling the scalar estimator by
        // hand on the same profiles.
        let mut cfg = desk_cfg();
        cfg.noise = 0.1;
        let scene = generate_scene(&cfg).unwrap();
        let cube = merge_headings(&scene.nw, &scene.se).unwrap();
        let est = estimate_height_raster(&cube, ProfileSource::ChannelMean, -3.0).unwrap();
        let axis = cube.axis();
        for r in (0..cube.n_range).step_by(7) {
            for a in (0..cube.n_azimuth).step_by(5) {
                let profile = cube.mean_profile(r, a);
                assert_eq!(
                    estimate_height(&profile, &axis, -3.0),
                    est.get(r, a),
                    "pixel ({r},{a})"
                );
            }
        }
    }
}
