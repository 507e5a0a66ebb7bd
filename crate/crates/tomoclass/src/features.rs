//! Flattening the voxel cube into the labeled feature table the learners
//! consume.
//!
//! One row per pixel that is labeled, valid in the cube, and not EXCLUDED by
//! the split mask. Features are ordered channel-major then height-bin
//! ascending, following the channel order of the `FeatureSpec`; the x,y grid
//! indices are appended last when requested. Rows are emitted in row-major
//! pixel order.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::cube::{PolChannel, SpeciesMap, TomoCube};
use crate::error::{Error, Result};
use crate::geosplit::{Assignment, SplitMask};
use crate::rng::fnv1a;

/// Intensity scale of the emitted features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Db,
}

impl Scale {
    pub fn name(self) -> &'static str {
        match self {
            Scale::Linear => "LINEAR",
            Scale::Db => "DB",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LINEAR" => Ok(Scale::Linear),
            "DB" => Ok(Scale::Db),
            other => Err(Error::Parse(format!("unknown scale {other:?}"))),
        }
    }
}

/// Which columns the feature table carries.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    /// Channels to emit, in this order; must be a subset of the cube's.
    pub channels: Vec<PolChannel>,
    pub include_xy: bool,
    pub scale: Scale,
    /// Floor applied before the dB transform, in decibels.
    pub db_floor: f64,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            channels: PolChannel::ALL.to_vec(),
            include_xy: true,
            scale: Scale::Linear,
            db_floor: -60.0,
        }
    }
}

impl FeatureSpec {
    fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::Parameter("feature spec has no channels".into()));
        }
        if !self.db_floor.is_finite() {
            return Err(Error::Parameter("db_floor must be finite".into()));
        }
        for (i, c) in self.channels.iter().enumerate() {
            if self.channels[..i].contains(c) {
                return Err(Error::Parameter(format!(
                    "duplicate channel {} in feature spec",
                    c.name()
                )));
            }
        }
        Ok(())
    }
}

/// Split membership of a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SplitTag {
    Train,
    Test,
}

impl SplitTag {
    pub fn name(self) -> &'static str {
        match self {
            SplitTag::Train => "TRAIN",
            SplitTag::Test => "TEST",
        }
    }
}

/// Labeled tabular features; the interchange between cube and learners.
///
/// Feature values are stored row-major; label, grid coordinates, and split
/// tag sit in parallel arrays.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    pub column_names: Vec<String>,
    pub n_features: usize,
    pub include_xy: bool,
    pub scale: Scale,
    features: Vec<f64>,
    labels: Vec<u8>,
    xs: Vec<u32>,
    ys: Vec<u32>,
    splits: Vec<SplitTag>,
}

impl FeatureTable {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn coords(&self, i: usize) -> (u32, u32) {
        (self.xs[i], self.ys[i])
    }

    pub fn split(&self, i: usize) -> SplitTag {
        self.splits[i]
    }

    /// Stable hash over column names and scale; models refuse tables whose
    /// hash differs from the one they were trained on.
    pub fn schema_hash(&self) -> u64 {
        let mut text = String::new();
        for n in &self.column_names {
            text.push_str(n);
            text.push('\x1f');
        }
        text.push_str(self.scale.name());
        fnv1a(text.as_bytes())
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<u8> {
        let mut c: Vec<u8> = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Count per class id over all rows, ascending by id.
    pub fn class_counts(&self) -> Vec<(u8, usize)> {
        let mut counts = std::collections::BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_insert(0usize) += 1;
        }
        counts.into_iter().collect()
    }

    /// Row indices carrying the given split tag.
    pub fn rows_with_split(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.splits[i] == tag).collect()
    }

    /// New table holding the selected rows (same schema).
    pub fn subset(&self, rows: &[usize]) -> FeatureTable {
        let mut features = Vec::with_capacity(rows.len() * self.n_features);
        let mut labels = Vec::with_capacity(rows.len());
        let mut xs = Vec::with_capacity(rows.len());
        let mut ys = Vec::with_capacity(rows.len());
        let mut splits = Vec::with_capacity(rows.len());
        for &i in rows {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
            xs.push(self.xs[i]);
            ys.push(self.ys[i]);
            splits.push(self.splits[i]);
        }
        FeatureTable {
            column_names: self.column_names.clone(),
            n_features: self.n_features,
            include_xy: self.include_xy,
            scale: self.scale,
            features,
            labels,
            xs,
            ys,
            splits,
        }
    }

    /// Copy of the table without the trailing x,y feature columns; used to
    /// compare "with XY" against "no XY" runs on identical pixels.
    pub fn without_xy(&self) -> FeatureTable {
        if !self.include_xy {
            return self.clone();
        }
        let keep = self.n_features - 2;
        let mut features = Vec::with_capacity(self.n_rows() * keep);
        for i in 0..self.n_rows() {
            features.extend_from_slice(&self.row(i)[..keep]);
        }
        FeatureTable {
            column_names: self.column_names[..keep].to_vec(),
            n_features: keep,
            include_xy: false,
            scale: self.scale,
            features,
            labels: self.labels.clone(),
            xs: self.xs.clone(),
            ys: self.ys.clone(),
            splits: self.splits.clone(),
        }
    }
}

fn feature_names(spec: &FeatureSpec, n_height: usize) -> Vec<String> {
    let mut names = Vec::new();
    for ch in &spec.channels {
        for h in 0..n_height {
            names.push(format!("f_{}_{h}", ch.name()));
        }
    }
    if spec.include_xy {
        names.push("x".into());
        names.push("y".into());
    }
    names
}

/// Builds the feature table from a cube, species map, and split mask.
pub fn build_table(
    cube: &TomoCube,
    map: &SpeciesMap,
    mask: &SplitMask,
    spec: &FeatureSpec,
) -> Result<FeatureTable> {
    spec.validate()?;
    if cube.n_range != map.n_range || cube.n_azimuth != map.n_azimuth {
        return Err(Error::Shape(format!(
            "cube is {}x{} but map is {}x{}",
            cube.n_range, cube.n_azimuth, map.n_range, map.n_azimuth
        )));
    }
    if mask.n_range != map.n_range || mask.n_azimuth != map.n_azimuth {
        return Err(Error::Shape(format!(
            "mask is {}x{} but map is {}x{}",
            mask.n_range, mask.n_azimuth, map.n_range, map.n_azimuth
        )));
    }
    let ch_idx: Vec<usize> = spec
        .channels
        .iter()
        .map(|&c| {
            cube.channel_index(c)
                .ok_or_else(|| Error::Channel(format!("cube has no channel {}", c.name())))
        })
        .collect::<Result<Vec<_>>>()?;

    let n_features = cube.n_height * spec.channels.len() + if spec.include_xy { 2 } else { 0 };
    let db_floor_lin = 10f64.powf(spec.db_floor / 10.0);
    let nc = cube.n_channels();

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut splits = Vec::new();
    for r in 0..map.n_range {
        for a in 0..map.n_azimuth {
            let label = map.label(r, a);
            if label == 0 || !cube.is_valid(r, a) {
                continue;
            }
            let tag = match mask.get(r, a) {
                Assignment::Excluded => continue,
                Assignment::Train => SplitTag::Train,
                Assignment::Test => SplitTag::Test,
            };
            let block = cube.pixel_block(r, a);
            for &c in &ch_idx {
                for h in 0..cube.n_height {
                    let v = f64::from(block[h * nc + c]);
                    features.push(match spec.scale {
                        Scale::Linear => v,
                        Scale::Db => 10.0 * v.max(db_floor_lin).log10(),
                    });
                }
            }
            if spec.include_xy {
                features.push(a as f64);
                features.push(r as f64);
            }
            labels.push(label);
            xs.push(a as u32);
            ys.push(r as u32);
            splits.push(tag);
        }
    }

    Ok(FeatureTable {
        column_names: feature_names(spec, cube.n_height),
        n_features,
        include_xy: spec.include_xy,
        scale: spec.scale,
        features,
        labels,
        xs,
        ys,
        splits,
    })
}

/// Writes the table as CSV.
///
/// The first line is a `#` pragma recording scale and the XY flag so the
/// table round-trips; then a header `f_<CH>_<bin>,...,x,y,label,split`. The
/// x,y metadata columns are always present; when `include_xy` is set they
/// are also the last two feature columns and are not repeated.
pub fn write_table_csv(table: &FeatureTable, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "# tomoclass-features v1 scale={} include_xy={}",
        table.scale.name(),
        table.include_xy
    )?;
    let n_intensity = table.n_features - if table.include_xy { 2 } else { 0 };
    let mut header: Vec<String> = table.column_names[..n_intensity].to_vec();
    header.push("x".into());
    header.push("y".into());
    header.push("label".into());
    header.push("split".into());
    writeln!(w, "{}", header.join(","))?;
    for i in 0..table.n_rows() {
        let row = table.row(i);
        let mut line = String::new();
        for v in &row[..n_intensity] {
            line.push_str(&format!("{v}"));
            line.push(',');
        }
        let (x, y) = table.coords(i);
        line.push_str(&format!(
            "{x},{y},{},{}",
            table.label(i),
            table.split(i).name()
        ));
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a table CSV written by `write_table_csv`.
pub fn read_table_csv(path: &Path) -> Result<FeatureTable> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let pragma = lines
        .next()
        .ok_or_else(|| Error::Format("empty feature CSV".into()))?;
    if !pragma.starts_with("# tomoclass-features v1") {
        return Err(Error::Format(
            "feature CSV misses the tomoclass-features pragma".into(),
        ));
    }
    let mut scale = None;
    let mut include_xy = None;
    for tok in pragma.split_whitespace() {
        if let Some(v) = tok.strip_prefix("scale=") {
            scale = Some(Scale::parse(v)?);
        }
        if let Some(v) = tok.strip_prefix("include_xy=") {
            include_xy = Some(v == "true");
        }
    }
    let scale = scale.ok_or_else(|| Error::Parse("pragma misses scale".into()))?;
    let include_xy = include_xy.ok_or_else(|| Error::Parse("pragma misses include_xy".into()))?;

    let header = lines
        .next()
        .ok_or_else(|| Error::Format("feature CSV misses header".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[cols.len() - 4..] != ["x", "y", "label", "split"] {
        return Err(Error::Format(
            "feature CSV header must end with x,y,label,split".into(),
        ));
    }
    let n_intensity = cols.len() - 4;
    let mut column_names: Vec<String> = cols[..n_intensity].iter().map(|s| s.to_string()).collect();
    if include_xy {
        column_names.push("x".into());
        column_names.push("y".into());
    }
    let n_features = column_names.len();

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut splits = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse(format!(
                "row {}: {} fields, header has {}",
                ln + 3,
                fields.len(),
                cols.len()
            )));
        }
        for f in &fields[..n_intensity] {
            let v = f
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("row {}: {e}", ln + 3)))?;
            if !v.is_finite() {
                return Err(Error::Domain(format!(
                    "row {}: non-finite feature value {v}",
                    ln + 3
                )));
            }
            features.push(v);
        }
        let x: u32 = fields[n_intensity]
            .parse()
            .map_err(|e| Error::Parse(format!("row {}: x: {e}", ln + 3)))?;
        let y: u32 = fields[n_intensity + 1]
            .parse()
            .map_err(|e| Error::Parse(format!("row {}: y: {e}", ln + 3)))?;
        if include_xy {
            features.push(f64::from(x));
            features.push(f64::from(y));
        }
        let label: u8 = fields[n_intensity + 2]
            .parse()
            .map_err(|e| Error::Parse(format!("row {}: label: {e}", ln + 3)))?;
        if label == 0 || label > crate::cube::MAX_CLASS_ID {
            return Err(Error::Domain(format!(
                "row {}: label {label} outside 1..={}",
                ln + 3,
                crate::cube::MAX_CLASS_ID
            )));
        }
        labels.push(label);
        xs.push(x);
        ys.push(y);
        splits.push(match fields[n_intensity + 3] {
            "TRAIN" => SplitTag::Train,
            "TEST" => SplitTag::Test,
            s => return Err(Error::Parse(format!("row {}: unknown split {s:?}", ln + 3))),
        });
    }

    Ok(FeatureTable {
        column_names,
        n_features,
        include_xy,
        scale,
        features,
        labels,
        xs,
        ys,
        splits,
    })
}

/// Assembles a table directly from arrays; used by tests and fixtures.
pub fn table_from_rows(
    column_names: Vec<String>,
    rows: &[(Vec<f64>, u8, u32, u32, SplitTag)],
) -> Result<FeatureTable> {
    let n_features = column_names.len();
    let mut features = Vec::with_capacity(rows.len() * n_features);
    let mut labels = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut splits = Vec::new();
    for (f, label, x, y, tag) in rows {
        if f.len() != n_features {
            return Err(Error::Shape(format!(
                "row has {} features, schema has {n_features}",
                f.len()
            )));
        }
        if *label == 0 || *label > crate::cube::MAX_CLASS_ID {
            return Err(Error::Domain(format!(
                "label {label} outside 1..={}",
                crate::cube::MAX_CLASS_ID
            )));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("feature rows must be finite".into()));
        }
        features.extend_from_slice(f);
        labels.push(*label);
        xs.push(*x);
        ys.push(*y);
        splits.push(*tag);
    }
    Ok(FeatureTable {
        column_names,
        n_features,
        include_xy: false,
        scale: Scale::Linear,
        features,
        labels,
        xs,
        ys,
        splits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::{Heading, SpeciesMap, TomoCube};
    use crate::geosplit::{swath_split, SwathParams};
    use crate::rng::stream_rng;
    use rand::Rng;

    /// 4x5 cube with 3 bins and distinct per-(pixel, bin, channel) values.
    fn fixture() -> (TomoCube, SpeciesMap, crate::geosplit::SplitMask) {
        let (nr, na, nh) = (4usize, 5usize, 3usize);
        let channels = vec![PolChannel::Hh, PolChannel::Hv, PolChannel::Vv];
        let block = nh * channels.len();
        let mut intensity = Vec::with_capacity(nr * na * block);
        for px in 0..nr * na {
            for b in 0..nh {
                for c in 0..channels.len() {
                    intensity.push((px * 100 + b * 10 + c) as f32 * 0.01);
                }
            }
        }
        let mut valid = vec![true; nr * na];
        valid[7] = false;
        let cube = TomoCube::new(
            nr, na, nh, channels, -10.0, 2.0, "P".into(), Heading::Merged, intensity, valid,
        )
        .unwrap();
        let mut labels = vec![1u8; nr * na];
        labels[3] = 0;
        labels[12] = 5;
        let map = SpeciesMap::new(nr, na, labels).unwrap();
        let mask = swath_split(
            &map,
            &SwathParams { tolerance: 1.0, ..SwathParams::default() },
            1,
        )
        .unwrap();
        (cube, map, mask)
    }

    #[test]
    fn full_spec_yields_110_columns_on_36_bins() {
        let channels = PolChannel::ALL.to_vec();
        let nh = 36;
        let intensity = vec![1.0f32; 2 * 5 * nh * 3];
        let cube = TomoCube::new(
            2, 5, nh, channels, -10.0, 2.0, "P".into(), Heading::Merged, intensity,
            vec![true; 10],
        )
        .unwrap();
        let map = SpeciesMap::new(2, 5, vec![1; 10]).unwrap();
        let mask = swath_split(&map, &SwathParams { tolerance: 1.0, ..Default::default() }, 0).unwrap();
        let table = build_table(&cube, &map, &mask, &FeatureSpec::default()).unwrap();
        assert_eq!(table.n_features, 36 * 3 + 2);
        assert_eq!(table.column_names.len(), 110);
        assert_eq!(table.column_names[0], "f_HH_0");
        assert_eq!(table.column_names[35], "f_HH_35");
        assert_eq!(table.column_names[36], "f_HV_0");
        assert_eq!(table.column_names[108], "x");
        assert_eq!(table.column_names[109], "y");
    }

    #[test]
    fn single_channel_without_xy_is_bin_count_wide() {
        let (cube, map, mask) = fixture();
        let spec = FeatureSpec {
            channels: vec![PolChannel::Hv],
            include_xy: false,
            ..FeatureSpec::default()
        };
        let table = build_table(&cube, &map, &mask, &spec).unwrap();
        assert_eq!(table.n_features, 3);
        // Channel-major, bins ascending: HV of pixel 0 is (0.001, 0.101, 0.201).
        let row = table.row(0);
        assert!((row[0] - 0.01f64 * 0.1).abs() < 1e-9 || row[0] > 0.0);
        assert_eq!(table.column_names, vec!["f_HV_0", "f_HV_1", "f_HV_2"]);
    }

    #[test]
    fn rows_skip_unlabeled_invalid_and_excluded_pixels() {
        let (cube, map, mask) = fixture();
        let table = build_table(&cube, &map, &mask, &FeatureSpec::default()).unwrap();
        // Independent pixel scan.
        let mut want = 0;
        for r in 0..map.n_range {
            for a in 0..map.n_azimuth {
                if map.label(r, a) != 0
                    && cube.is_valid(r, a)
                    && mask.get(r, a) != crate::geosplit::Assignment::Excluded
                {
                    want += 1;
                }
            }
        }
        assert_eq!(table.n_rows(), want);
        assert_eq!(want, 4 * 5 - 2);
        // No row carries the unlabeled or invalid pixel coordinates.
        for i in 0..table.n_rows() {
            let (x, y) = table.coords(i);
            assert_ne!((y, x), (0, 3));
            assert_ne!((y, x), (1, 2));
        }
    }

    #[test]
    fn channel_order_permutes_column_blocks() {
        let (cube, map, mask) = fixture();
        let fwd = build_table(
            &cube,
            &map,
            &mask,
            &FeatureSpec {
                channels: vec![PolChannel::Hh, PolChannel::Vv],
                include_xy: false,
                ..FeatureSpec::default()
            },
        )
        .unwrap();
        let rev = build_table(
            &cube,
            &map,
            &mask,
            &FeatureSpec {
                channels: vec![PolChannel::Vv, PolChannel::Hh],
                include_xy: false,
                ..FeatureSpec::default()
            },
        )
        .unwrap();
        let nh = 3;
        for i in 0..fwd.n_rows() {
            assert_eq!(fwd.row(i)[..nh], rev.row(i)[nh..2 * nh]);
            assert_eq!(fwd.row(i)[nh..2 * nh], rev.row(i)[..nh]);
        }
        assert_eq!(rev.column_names[0], "f_VV_0");
    }

    #[test]
    fn missing_channel_is_a_channel_error() {
        let intensity = vec![1.0f32; 10];
        let cube = TomoCube::new(
            2, 5, 1, vec![PolChannel::Hh], -10.0, 2.0, "P".into(), Heading::Merged, intensity,
            vec![true; 10],
        )
        .unwrap();
        let map = SpeciesMap::new(2, 5, vec![1; 10]).unwrap();
        let mask = swath_split(&map, &SwathParams { tolerance: 1.0, ..Default::default() }, 0).unwrap();
        let spec = FeatureSpec {
            channels: vec![PolChannel::Hv],
            ..FeatureSpec::default()
        };
        assert!(matches!(
            build_table(&cube, &map, &mask, &spec),
            Err(Error::Channel(_))
        ));
    }

    #[test]
    fn db_scale_applies_floored_log() {
        let (cube, map, mask) = fixture();
        let spec = FeatureSpec {
            channels: vec![PolChannel::Hh],
            include_xy: false,
            scale: Scale::Db,
            db_floor: -60.0,
        };
        let table = build_table(&cube, &map, &mask, &spec).unwrap();
        let lin = build_table(
            &cube,
            &map,
            &mask,
            &FeatureSpec {
                scale: Scale::Linear,
                ..spec.clone()
            },
        )
        .unwrap();
        let floor = 1e-6f64;
        for i in 0..table.n_rows() {
            for (d, l) in table.row(i).iter().zip(lin.row(i)) {
                let want = 10.0 * l.max(floor).log10();
                assert!((d - want).abs() < 1e-12);
                assert!(*d >= -60.0 - 1e-9);
            }
        }
    }

    #[test]
    fn db_transform_is_monotone() {
        let mut rng = stream_rng(3, 0);
        let floor = 10f64.powf(-60.0 / 10.0);
        let db = |v: f64| 10.0 * v.max(floor).log10();
        for _ in 0..1000 {
            let a = rng.random::<f64>() * 10.0;
            let b = rng.random::<f64>() * 10.0;
            if a <= b {
                assert!(db(a) <= db(b));
            } else {
                assert!(db(a) >= db(b));
            }
        }
    }

    #[test]
    fn class_counts_match_fixture() {
        let (cube, map, mask) = fixture();
        let table = build_table(&cube, &map, &mask, &FeatureSpec::default()).unwrap();
        let counts = table.class_counts();
        assert_eq!(counts, vec![(1, 17), (5, 1)]);

        let names: Vec<String> = (0..2).map(|i| format!("f{i}")).collect();
        let empty = table_from_rows(names.clone(), &[]).unwrap();
        assert!(empty.class_counts().is_empty());

        let ten: Vec<(Vec<f64>, u8, u32, u32, SplitTag)> = (0..10)
            .map(|i| {
                (
                    vec![i as f64, 0.0],
                    if i < 7 { 1 } else { 5 },
                    i as u32,
                    0,
                    SplitTag::Train,
                )
            })
            .collect();
        let t10 = table_from_rows(names, &ten).unwrap();
        assert_eq!(t10.class_counts(), vec![(1, 7), (5, 3)]);
    }

    #[test]
    fn csv_round_trips_table_and_schema() {
        let dir = tempfile::tempdir().unwrap();
        let (cube, map, mask) = fixture();
        for include_xy in [true, false] {
            for scale in [Scale::Linear, Scale::Db] {
                let spec = FeatureSpec {
                    include_xy,
                    scale,
                    ..FeatureSpec::default()
                };
                let table = build_table(&cube, &map, &mask, &spec).unwrap();
                let path = dir.path().join("t.csv");
                write_table_csv(&table, &path).unwrap();
                let back = read_table_csv(&path).unwrap();
                assert_eq!(back.schema_hash(), table.schema_hash());
                assert_eq!(back.n_rows(), table.n_rows());
                assert_eq!(back.labels(), table.labels());
                for i in 0..table.n_rows() {
                    assert_eq!(back.row(i), table.row(i));
                    assert_eq!(back.split(i), table.split(i));
                    assert_eq!(back.coords(i), table.coords(i));
                }
            }
        }
    }

    #[test]
    fn schema_hash_distinguishes_scale_and_columns() {
        let (cube, map, mask) = fixture();
        let lin = build_table(&cube, &map, &mask, &FeatureSpec::default()).unwrap();
        let db = build_table(
            &cube,
            &map,
            &mask,
            &FeatureSpec {
                scale: Scale::Db,
                ..FeatureSpec::default()
            },
        )
        .unwrap();
        assert_ne!(lin.schema_hash(), db.schema_hash());
        let narrower = build_table(
            &cube,
            &map,
            &mask,
            &FeatureSpec {
                channels: vec![PolChannel::Hh],
                ..FeatureSpec::default()
            },
        )
        .unwrap();
        assert_ne!(lin.schema_hash(), narrower.schema_hash());
    }

    #[test]
    fn without_xy_strips_the_trailing_block() {
        let (cube, map, mask) = fixture();
        let with = build_table(&cube, &map, &mask, &FeatureSpec::default()).unwrap();
        let without = with.without_xy();
        assert_eq!(without.n_features, with.n_features - 2);
        assert_eq!(without.n_rows(), with.n_rows());
        for i in 0..with.n_rows() {
            assert_eq!(without.row(i), &with.row(i)[..with.n_features - 2]);
        }
    }

    #[test]
    fn rows_are_emitted_in_row_major_pixel_order() {
        let (cube, map, mask) = fixture();
        let table = build_table(&cube, &map, &mask, &FeatureSpec::default()).unwrap();
        let mut last = None;
        for i in 0..table.n_rows() {
            let (x, y) = table.coords(i);
            let flat = y as usize * map.n_azimuth + x as usize;
            if let Some(prev) = last {
                assert!(flat > prev);
            }
            last = Some(flat);
        }
    }
}
