//! Property tests over the crate's core invariants.

use proptest::prelude::*;

use tomoclass::cube::{
    merge_headings, rasterize_lidar, read_cube, write_cube, Heading, HeightAxis, LidarPoints,
    PolChannel, SpeciesMap, TomoCube,
};
use tomoclass::geosplit::{square_split, swath_split, validate_split, Assignment, SquareParams, SwathParams};
use tomoclass::heightstats::{estimate_height, kde};
use tomoclass::hpo::expected_improvement;

fn cube_strategy(heading: Heading) -> impl Strategy<Value = TomoCube> {
    (2usize..6, 2usize..7, 1usize..5, 1usize..4, any::<u64>()).prop_map(
        move |(nr, na, nh, nch, seed)| {
            use rand::Rng;
            let channels: Vec<PolChannel> = PolChannel::ALL[..nch].to_vec();
            let mut rng = tomoclass::rng::stream_rng(seed, 0);
            let n_px = nr * na;
            let block = nh * nch;
            let valid: Vec<bool> = (0..n_px).map(|_| rng.random::<f64>() > 0.2).collect();
            let intensity: Vec<f32> = (0..n_px * block)
                .map(|_| rng.random::<f32>() * 8.0)
                .collect();
            TomoCube::new(
                nr,
                na,
                nh,
                channels,
                -10.0,
                2.0,
                "P".into(),
                heading,
                intensity,
                valid,
            )
            .unwrap()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cube_files_round_trip_bit_exact(cube in cube_strategy(Heading::Nw)) {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.tomo");
        let p2 = dir.path().join("b.tomo");
        write_cube(&cube, &p1).unwrap();
        let back = read_cube(&p1).unwrap();
        write_cube(&back, &p2).unwrap();
        prop_assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        // Every valid voxel of the loaded cube is nonnegative.
        for r in 0..back.n_range {
            for a in 0..back.n_azimuth {
                if back.is_valid(r, a) {
                    prop_assert!(back.pixel_block(r, a).iter().all(|v| *v >= 0.0));
                }
            }
        }
    }

    #[test]
    fn merge_is_voxelwise_symmetric(seed in any::<u64>(), nr in 2usize..6, na in 2usize..7) {
        use rand::Rng;
        let mut rng = tomoclass::rng::stream_rng(seed, 1);
        let mk = |heading: Heading, rng: &mut rand_chacha::ChaCha8Rng| {
            let n_px = nr * na;
            let valid: Vec<bool> = (0..n_px).map(|_| rng.random::<f64>() > 0.3).collect();
            let intensity: Vec<f32> = (0..n_px * 2).map(|_| rng.random::<f32>()).collect();
            TomoCube::new(nr, na, 2, vec![PolChannel::Hh], -10.0, 2.0, "P".into(), heading, intensity, valid).unwrap()
        };
        let nw = mk(Heading::Nw, &mut rng);
        let se = mk(Heading::Se, &mut rng);
        let ab = merge_headings(&nw, &se).unwrap();
        // Swap payloads across headings; the merge must be voxel-identical.
        let nw2 = TomoCube::new(nr, na, 2, vec![PolChannel::Hh], -10.0, 2.0, "P".into(), Heading::Nw, se.intensity().to_vec(), se.valid_mask().to_vec()).unwrap();
        let se2 = TomoCube::new(nr, na, 2, vec![PolChannel::Hh], -10.0, 2.0, "P".into(), Heading::Se, nw.intensity().to_vec(), nw.valid_mask().to_vec()).unwrap();
        let ba = merge_headings(&nw2, &se2).unwrap();
        let bits = |c: &TomoCube| c.intensity().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&ab), bits(&ba));
    }

    #[test]
    fn masks_partition_and_repeat(seed in any::<u64>(), nr in 25usize..60, na in 25usize..60, square in any::<bool>()) {
        let map = SpeciesMap::new(nr, na, vec![1; nr * na]).unwrap();
        let build = || {
            if square {
                square_split(&map, &SquareParams::default(), seed).unwrap()
            } else {
                swath_split(&map, &SwathParams::default(), seed).unwrap()
            }
        };
        let a = build();
        let b = build();
        prop_assert_eq!(a.assignment(), b.assignment());
        prop_assert!(a.assignment().iter().all(|&x| x == Assignment::Train || x == Assignment::Test));
        let report = validate_split(&a, &map).unwrap();
        prop_assert_eq!(report.labeled_total(), nr * na);
        if !square {
            prop_assert_eq!(report.test_components, 1);
        } else {
            prop_assert_eq!(report.test_components, a.n_regions);
        }
    }

    #[test]
    fn kde_density_integrates_to_one(seed in any::<u64>(), n in 4usize..128) {
        use rand::Rng;
        let mut rng = tomoclass::rng::stream_rng(seed, 2);
        let spread = rng.random::<f64>() * 20.0 + 0.1;
        let samples: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * spread).collect();
        if let Ok(curve) = kde(&samples, 301) {
            prop_assert!((curve.integral() - 1.0).abs() <= 1e-3);
            prop_assert!(curve.density.iter().all(|d| *d >= 0.0));
        }
    }

    #[test]
    fn ei_is_nonnegative_and_monotone(mean in -5.0..5.0f64, best in -5.0..5.0f64, s1 in 0.0..3.0f64, ds in 0.0..3.0f64) {
        let e1 = expected_improvement(mean, s1, best);
        let e2 = expected_improvement(mean, s1 + ds, best);
        prop_assert!(e1 >= 0.0);
        if mean <= best {
            prop_assert!(e2 >= e1 - 1e-12);
        }
    }

    #[test]
    fn height_estimates_stay_on_the_axis(seed in any::<u64>(), threshold in -20.0..0.0f64) {
        use rand::Rng;
        let mut rng = tomoclass::rng::stream_rng(seed, 3);
        let axis = HeightAxis { min_m: -10.0, step_m: 2.0, n_bins: 12 };
        let profile: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
        let est = estimate_height(&profile, &axis, threshold).unwrap();
        prop_assert!(est > axis.min_m);
        prop_assert!(est <= axis.min_m + axis.n_bins as f64 * axis.step_m);
        // Tightening the threshold toward zero never raises the estimate.
        let tighter = estimate_height(&profile, &axis, threshold / 2.0).unwrap();
        prop_assert!(tighter <= est);
    }

    #[test]
    fn rasterized_heights_never_exceed_the_point_cloud(seed in any::<u64>(), n in 1usize..200) {
        use rand::Rng;
        let mut rng = tomoclass::rng::stream_rng(seed, 4);
        let pts: Vec<(f64, f64, f64)> = (0..n)
            .map(|_| (rng.random::<f64>() * 8.0, rng.random::<f64>() * 8.0, rng.random::<f64>() * 40.0))
            .collect();
        let max_z = pts.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max) as f32;
        let (raster, dropped) = rasterize_lidar(&LidarPoints::new(pts).unwrap(), 6, 6).unwrap();
        for h in raster.heights() {
            if !h.is_nan() {
                // Cells hold f32, so the bound holds at f32 precision.
                prop_assert!(*h <= max_z);
            }
        }
        let _ = dropped;
    }
}
