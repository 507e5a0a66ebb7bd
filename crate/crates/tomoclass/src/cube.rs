//! Tomographic cubes, species label maps, LiDAR points, and height rasters,
//! plus their on-disk formats.
//!
//! Grid frame convention: `x` is the azimuth index (column), `y` is the range
//! index (row). Rasters are stored row-major over (range, azimuth). Cube
//! voxels are stored in C order over (range, azimuth, height, channel), which
//! is also the payload order of the TOMO1 file format. Nodata is a quiet NaN
//! in floating payloads and 0 in label rasters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

const TOMO_MAGIC: &[u8; 6] = b"TOMO1\0";
const LBL_MAGIC: &[u8; 5] = b"LBL1\0";

/// Polarimetric channel of a SAR acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolChannel {
    Hh,
    Hv,
    Vv,
}

impl PolChannel {
    pub const ALL: [PolChannel; 3] = [PolChannel::Hh, PolChannel::Hv, PolChannel::Vv];

    pub fn code(self) -> u8 {
        match self {
            PolChannel::Hh => 0,
            PolChannel::Hv => 1,
            PolChannel::Vv => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(PolChannel::Hh),
            1 => Ok(PolChannel::Hv),
            2 => Ok(PolChannel::Vv),
            c => Err(Error::Header(format!("unknown channel code {c}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PolChannel::Hh => "HH",
            PolChannel::Hv => "HV",
            PolChannel::Vv => "VV",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "HH" => Ok(PolChannel::Hh),
            "HV" => Ok(PolChannel::Hv),
            "VV" => Ok(PolChannel::Vv),
            other => Err(Error::Parse(format!("unknown channel name {other:?}"))),
        }
    }
}

/// Flight heading of an acquisition, or the merged product of both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Heading {
    Nw,
    Se,
    Merged,
}

impl Heading {
    pub fn code(self) -> u8 {
        match self {
            Heading::Nw => 0,
            Heading::Se => 1,
            Heading::Merged => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Heading::Nw),
            1 => Ok(Heading::Se),
            2 => Ok(Heading::Merged),
            c => Err(Error::Header(format!("unknown heading code {c}"))),
        }
    }
}

/// Vertical axis of a cube: `n_bins` bins of `step_m` meters starting at
/// `min_m`. Bin `i` spans `[min_m + i*step, min_m + (i+1)*step)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightAxis {
    pub min_m: f64,
    pub step_m: f64,
    pub n_bins: usize,
}

impl HeightAxis {
    pub fn bin_center(&self, bin: usize) -> f64 {
        self.min_m + (bin as f64 + 0.5) * self.step_m
    }

    pub fn bin_top(&self, bin: usize) -> f64 {
        self.min_m + (bin as f64 + 1.0) * self.step_m
    }

    pub fn max_m(&self) -> f64 {
        self.min_m + self.n_bins as f64 * self.step_m
    }

    /// Bin containing height `h`, clamped to the axis.
    pub fn bin_of(&self, h: f64) -> usize {
        let i = ((h - self.min_m) / self.step_m).floor();
        (i.max(0.0) as usize).min(self.n_bins.saturating_sub(1))
    }
}

/// 4-D tomographic intensity cube over (range, azimuth, height, channel).
///
/// Intensities are linear-power 32-bit floats, nonnegative wherever the pixel
/// is valid. Invalid pixels carry NaN across their whole (height, channel)
/// block.
#[derive(Debug, Clone)]
pub struct TomoCube {
    pub n_range: usize,
    pub n_azimuth: usize,
    pub n_height: usize,
    pub channels: Vec<PolChannel>,
    pub height_min_m: f64,
    pub height_step_m: f64,
    pub band: String,
    pub heading: Heading,
    intensity: Vec<f32>,
    valid: Vec<bool>,
}

impl TomoCube {
    /// Builds a cube and checks its invariants. `intensity` is in C order
    /// over (range, azimuth, height, channel); pixels flagged invalid are
    /// rewritten to NaN.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_range: usize,
        n_azimuth: usize,
        n_height: usize,
        channels: Vec<PolChannel>,
        height_min_m: f64,
        height_step_m: f64,
        band: String,
        heading: Heading,
        mut intensity: Vec<f32>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if n_height == 0 {
            return Err(Error::Header("n_height must be at least 1".into()));
        }
        if !(height_step_m > 0.0) {
            return Err(Error::Header(format!(
                "height_step_m must be positive, got {height_step_m}"
            )));
        }
        if channels.is_empty() {
            return Err(Error::Header("channel list is empty".into()));
        }
        for (i, a) in channels.iter().enumerate() {
            if channels[..i].contains(a) {
                return Err(Error::Header(format!("duplicate channel {}", a.name())));
            }
        }
        let n_px = n_range * n_azimuth;
        let block = n_height * channels.len();
        if intensity.len() != n_px * block {
            return Err(Error::Truncated(format!(
                "intensity has {} values, dims require {}",
                intensity.len(),
                n_px * block
            )));
        }
        if valid.len() != n_px {
            return Err(Error::Shape(format!(
                "valid mask has {} entries, dims require {n_px}",
                valid.len()
            )));
        }
        for (px, &ok) in valid.iter().enumerate() {
            let slot = &mut intensity[px * block..(px + 1) * block];
            if ok {
                for &v in slot.iter() {
                    if !v.is_finite() || v < 0.0 {
                        return Err(Error::Domain(format!(
                            "valid pixel {px} holds non-finite or negative intensity {v}"
                        )));
                    }
                }
            } else {
                slot.fill(f32::NAN);
            }
        }
        Ok(TomoCube {
            n_range,
            n_azimuth,
            n_height,
            channels,
            height_min_m,
            height_step_m,
            band,
            heading,
            intensity,
            valid,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn axis(&self) -> HeightAxis {
        HeightAxis {
            min_m: self.height_min_m,
            step_m: self.height_step_m,
            n_bins: self.n_height,
        }
    }

    pub fn is_valid(&self, range: usize, azimuth: usize) -> bool {
        self.valid[range * self.n_azimuth + azimuth]
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    /// Raw intensity payload in file order.
    pub fn intensity(&self) -> &[f32] {
        &self.intensity
    }

    /// The (height, channel) block of one pixel, length `n_height * n_channels`,
    /// laid out height-major (index `h * n_channels + c`).
    pub fn pixel_block(&self, range: usize, azimuth: usize) -> &[f32] {
        let block = self.n_height * self.channels.len();
        let start = (range * self.n_azimuth + azimuth) * block;
        &self.intensity[start..start + block]
    }

    pub fn value(&self, range: usize, azimuth: usize, bin: usize, channel: usize) -> f32 {
        self.pixel_block(range, azimuth)[bin * self.channels.len() + channel]
    }

    pub fn channel_index(&self, ch: PolChannel) -> Option<usize> {
        self.channels.iter().position(|&c| c == ch)
    }

    /// Vertical intensity profile of one pixel for one channel.
    pub fn profile(&self, range: usize, azimuth: usize, channel: usize) -> Vec<f64> {
        let block = self.pixel_block(range, azimuth);
        let nc = self.channels.len();
        (0..self.n_height)
            .map(|h| f64::from(block[h * nc + channel]))
            .collect()
    }

    /// Vertical profile averaged over all channels.
    pub fn mean_profile(&self, range: usize, azimuth: usize) -> Vec<f64> {
        let block = self.pixel_block(range, azimuth);
        let nc = self.channels.len();
        (0..self.n_height)
            .map(|h| {
                let s: f64 = (0..nc).map(|c| f64::from(block[h * nc + c])).sum();
                s / nc as f64
            })
            .collect()
    }
}

/// Reads a TOMO1 cube file.
pub fn read_cube(path: &Path) -> Result<TomoCube> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for TOMO1 magic".into()))?;
    if &magic != TOMO_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected TOMO1",
            magic
        )));
    }
    let n_range = r.read_u32::<LittleEndian>()? as usize;
    let n_azimuth = r.read_u32::<LittleEndian>()? as usize;
    let n_height = r.read_u32::<LittleEndian>()? as usize;
    let n_channels = r.read_u32::<LittleEndian>()? as usize;
    let height_min = f64::from(r.read_f32::<LittleEndian>()?);
    let height_step = f64::from(r.read_f32::<LittleEndian>()?);
    if !(height_step > 0.0) {
        return Err(Error::Header(format!(
            "height step must be positive, got {height_step}"
        )));
    }
    let heading = Heading::from_code(r.read_u8()?)?;
    let band_len = r.read_u8()? as usize;
    let mut band_bytes = vec![0u8; band_len];
    r.read_exact(&mut band_bytes)
        .map_err(|_| Error::Truncated("band tag truncated".into()))?;
    let band = String::from_utf8(band_bytes)
        .map_err(|_| Error::Header("band tag is not valid UTF-8".into()))?;
    let mut channels = Vec::with_capacity(n_channels);
    for _ in 0..n_channels {
        channels.push(PolChannel::from_code(r.read_u8()?)?);
    }

    let n_values = n_range * n_azimuth * n_height * n_channels;
    let mut intensity = vec![0f32; n_values];
    r.read_f32_into::<LittleEndian>(&mut intensity)
        .map_err(|_| {
            Error::Truncated(format!(
                "payload shorter than the {n_values} values implied by the header"
            ))
        })?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Truncated(
            "payload longer than the header dims imply".into(),
        ));
    }

    // A pixel is valid iff its whole block is NaN-free.
    let block = n_height * n_channels;
    let n_px = n_range * n_azimuth;
    let mut valid = vec![false; n_px];
    for px in 0..n_px {
        let slot = &intensity[px * block..(px + 1) * block];
        let has_nan = slot.iter().any(|v| v.is_nan());
        if !has_nan {
            for &v in slot {
                if v.is_infinite() || v < 0.0 {
                    return Err(Error::Domain(format!(
                        "pixel {px} holds out-of-domain intensity {v}"
                    )));
                }
            }
            valid[px] = true;
        }
    }

    TomoCube::new(
        n_range,
        n_azimuth,
        n_height,
        channels,
        height_min,
        height_step,
        band,
        heading,
        intensity,
        valid,
    )
}

/// Writes a TOMO1 cube file. `read_cube(write_cube(c))` is byte-exact on the
/// intensity payload.
pub fn write_cube(cube: &TomoCube, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TOMO_MAGIC)?;
    w.write_u32::<LittleEndian>(cube.n_range as u32)?;
    w.write_u32::<LittleEndian>(cube.n_azimuth as u32)?;
    w.write_u32::<LittleEndian>(cube.n_height as u32)?;
    w.write_u32::<LittleEndian>(cube.channels.len() as u32)?;
    w.write_f32::<LittleEndian>(cube.height_min_m as f32)?;
    w.write_f32::<LittleEndian>(cube.height_step_m as f32)?;
    w.write_u8(cube.heading.code())?;
    let band = cube.band.as_bytes();
    if band.len() > u8::MAX as usize {
        return Err(Error::Header("band tag longer than 255 bytes".into()));
    }
    w.write_u8(band.len() as u8)?;
    w.write_all(band)?;
    for &ch in &cube.channels {
        w.write_u8(ch.code())?;
    }
    for &v in &cube.intensity {
        w.write_f32::<LittleEndian>(v)?;
    }
    w.flush()?;
    Ok(())
}

/// Merges the two heading acquisitions into one cube.
///
/// Per pixel: both valid -> per-voxel arithmetic mean; one valid -> that
/// cube's block; neither -> invalid.
pub fn merge_headings(nw: &TomoCube, se: &TomoCube) -> Result<TomoCube> {
    if nw.heading != Heading::Nw || se.heading != Heading::Se {
        return Err(Error::Parameter(
            "merge_headings expects a NW cube and a SE cube".into(),
        ));
    }
    if nw.n_range != se.n_range
        || nw.n_azimuth != se.n_azimuth
        || nw.n_height != se.n_height
        || nw.channels != se.channels
    {
        return Err(Error::Shape(
            "heading cubes disagree on dims or channels".into(),
        ));
    }
    if nw.height_min_m != se.height_min_m || nw.height_step_m != se.height_step_m {
        return Err(Error::Shape("heading cubes disagree on height axis".into()));
    }

    let n_px = nw.n_range * nw.n_azimuth;
    let block = nw.n_height * nw.channels.len();
    let mut intensity = vec![f32::NAN; n_px * block];
    let mut valid = vec![false; n_px];
    for px in 0..n_px {
        let out = &mut intensity[px * block..(px + 1) * block];
        match (nw.valid[px], se.valid[px]) {
            (true, true) => {
                let a = &nw.intensity[px * block..(px + 1) * block];
                let b = &se.intensity[px * block..(px + 1) * block];
                for (o, (x, y)) in out.iter_mut().zip(a.iter().zip(b)) {
                    *o = 0.5 * (x + y);
                }
                valid[px] = true;
            }
            (true, false) => {
                out.copy_from_slice(&nw.intensity[px * block..(px + 1) * block]);
                valid[px] = true;
            }
            (false, true) => {
                out.copy_from_slice(&se.intensity[px * block..(px + 1) * block]);
                valid[px] = true;
            }
            (false, false) => {}
        }
    }

    TomoCube::new(
        nw.n_range,
        nw.n_azimuth,
        nw.n_height,
        nw.channels.clone(),
        nw.height_min_m,
        nw.height_step_m,
        nw.band.clone(),
        Heading::Merged,
        intensity,
        valid,
    )
}

/// Species ground-truth raster with the class dictionary.
///
/// Label 0 means "no ground truth"; 1..=8 are the forest-type classes.
#[derive(Debug, Clone)]
pub struct SpeciesMap {
    pub n_range: usize,
    pub n_azimuth: usize,
    labels: Vec<u8>,
    pub dictionary: Vec<ClassEntry>,
}

/// One class of the species dictionary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassEntry {
    pub id: u8,
    pub code: &'static str,
    pub name: &'static str,
}

/// Forest types of the study area with reference pixel counts, used both as
/// the default label dictionary and as the default synthetic class mix.
pub const FOREST_TYPES: [(u8, &str, &str, u32); 8] = [
    (1, "AA0", "Aspen forest", 64389),
    (2, "AA1", "Pine forest", 5199),
    (3, "AA2", "Beech forest with deciduous woods", 2884),
    (4, "AB0", "Douglas fir forest", 11593),
    (5, "AJ0", "Mixed spruce forest with native deciduous woods", 18120),
    (6, "AJ1", "Oak-beech forest", 2590),
    (7, "AK0", "Oak forest", 869),
    (8, "AS0", "Beech forest", 1063),
];

pub const MAX_CLASS_ID: u8 = 8;

/// Default class dictionary.
pub fn default_dictionary() -> Vec<ClassEntry> {
    FOREST_TYPES
        .iter()
        .map(|&(id, code, name, _)| ClassEntry { id, code, name })
        .collect()
}

/// Reference class proportions, normalized from the dictionary pixel counts.
pub fn reference_proportions() -> [f64; 8] {
    let total: u32 = FOREST_TYPES.iter().map(|t| t.3).sum();
    let mut p = [0.0; 8];
    for (i, t) in FOREST_TYPES.iter().enumerate() {
        p[i] = f64::from(t.3) / f64::from(total);
    }
    p
}

impl SpeciesMap {
    pub fn new(n_range: usize, n_azimuth: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != n_range * n_azimuth {
            return Err(Error::Shape(format!(
                "label raster has {} entries, dims require {}",
                labels.len(),
                n_range * n_azimuth
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > MAX_CLASS_ID) {
            return Err(Error::Domain(format!(
                "label {bad} exceeds the class range 0..={MAX_CLASS_ID}"
            )));
        }
        Ok(SpeciesMap {
            n_range,
            n_azimuth,
            labels,
            dictionary: default_dictionary(),
        })
    }

    pub fn label(&self, range: usize, azimuth: usize) -> u8 {
        self.labels[range * self.n_azimuth + azimuth]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Pixel count per class id (labeled pixels only), in ascending id order.
    pub fn class_counts(&self) -> Vec<(u8, usize)> {
        let mut counts = [0usize; MAX_CLASS_ID as usize + 1];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        (1..=MAX_CLASS_ID)
            .filter(|&id| counts[id as usize] > 0)
            .map(|id| (id, counts[id as usize]))
            .collect()
    }

    pub fn n_labeled(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    pub fn entry(&self, id: u8) -> Option<&ClassEntry> {
        self.dictionary.iter().find(|e| e.id == id)
    }
}

/// Reads an LBL1 raster as a species map (labels 0..=8).
pub fn read_species_map(path: &Path) -> Result<SpeciesMap> {
    let (n_range, n_azimuth, payload) = read_label_raster(path)?;
    SpeciesMap::new(n_range, n_azimuth, payload)
}

/// Writes a species map as an LBL1 raster.
pub fn write_species_map(map: &SpeciesMap, path: &Path) -> Result<()> {
    write_label_raster(map.n_range, map.n_azimuth, &map.labels, path)
}

/// Reads the LBL1 container: magic, u32 dims, u8 payload.
pub fn read_label_raster(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for LBL1 magic".into()))?;
    if &magic != LBL_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}, expected LBL1", magic)));
    }
    let n_range = r.read_u32::<LittleEndian>()? as usize;
    let n_azimuth = r.read_u32::<LittleEndian>()? as usize;
    let mut payload = vec![0u8; n_range * n_azimuth];
    r.read_exact(&mut payload)
        .map_err(|_| Error::Truncated("label payload shorter than header dims imply".into()))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Truncated(
            "label payload longer than header dims imply".into(),
        ));
    }
    Ok((n_range, n_azimuth, payload))
}

/// Writes the LBL1 container.
pub fn write_label_raster(n_range: usize, n_azimuth: usize, payload: &[u8], path: &Path) -> Result<()> {
    if payload.len() != n_range * n_azimuth {
        return Err(Error::Shape(format!(
            "payload has {} entries, dims require {}",
            payload.len(),
            n_range * n_azimuth
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(LBL_MAGIC)?;
    w.write_u32::<LittleEndian>(n_range as u32)?;
    w.write_u32::<LittleEndian>(n_azimuth as u32)?;
    w.write_all(payload)?;
    w.flush()?;
    Ok(())
}

/// LiDAR point cloud in the cube's grid frame (x = azimuth, y = range, z = meters).
#[derive(Debug, Clone, Default)]
pub struct LidarPoints {
    pub points: Vec<(f64, f64, f64)>,
}

impl LidarPoints {
    pub fn new(points: Vec<(f64, f64, f64)>) -> Result<Self> {
        for &(x, y, z) in &points {
            if !(x.is_finite() && y.is_finite() && z.is_finite()) {
                return Err(Error::Domain(format!(
                    "LiDAR point ({x}, {y}, {z}) has a non-finite coordinate"
                )));
            }
        }
        Ok(LidarPoints { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Reads LiDAR text: one `x y z` triple per line, `#` starts a comment.
pub fn read_lidar(path: &Path) -> Result<LidarPoints> {
    let text = std::fs::read_to_string(path)?;
    let mut points = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let mut next = |what: &str| -> Result<f64> {
            it.next()
                .ok_or_else(|| Error::Parse(format!("line {}: missing {what}", ln + 1)))?
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", ln + 1)))
        };
        let x = next("x")?;
        let y = next("y")?;
        let z = next("z")?;
        if it.next().is_some() {
            return Err(Error::Parse(format!("line {}: trailing fields", ln + 1)));
        }
        points.push((x, y, z));
    }
    LidarPoints::new(points)
}

/// Writes LiDAR text.
pub fn write_lidar(points: &LidarPoints, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# x y z")?;
    for &(x, y, z) in &points.points {
        writeln!(w, "{x} {y} {z}")?;
    }
    w.flush()?;
    Ok(())
}

/// Per-pixel canopy height in meters; NaN marks nodata.
#[derive(Debug, Clone)]
pub struct HeightRaster {
    pub n_range: usize,
    pub n_azimuth: usize,
    heights: Vec<f32>,
}

impl HeightRaster {
    pub fn new(n_range: usize, n_azimuth: usize, heights: Vec<f32>) -> Result<Self> {
        if heights.len() != n_range * n_azimuth {
            return Err(Error::Shape(format!(
                "height raster has {} entries, dims require {}",
                heights.len(),
                n_range * n_azimuth
            )));
        }
        if heights.iter().any(|h| h.is_infinite()) {
            return Err(Error::Domain("height raster holds an infinite value".into()));
        }
        Ok(HeightRaster {
            n_range,
            n_azimuth,
            heights,
        })
    }

    pub fn get(&self, range: usize, azimuth: usize) -> Option<f64> {
        let v = self.heights[range * self.n_azimuth + azimuth];
        if v.is_nan() {
            None
        } else {
            Some(f64::from(v))
        }
    }

    pub fn heights(&self) -> &[f32] {
        &self.heights
    }
}

/// Rasterizes LiDAR points into a canopy height model.
///
/// Each 1x1 grid cell takes the max z over the points falling in it
/// (canopy-top proxy); cells without points stay nodata. Returns the raster
/// and the count of points dropped for falling outside the grid.
pub fn rasterize_lidar(
    points: &LidarPoints,
    n_range: usize,
    n_azimuth: usize,
) -> Result<(HeightRaster, usize)> {
    if n_range == 0 || n_azimuth == 0 {
        return Err(Error::Parameter("grid dims must be positive".into()));
    }
    let mut heights = vec![f32::NAN; n_range * n_azimuth];
    let mut dropped = 0usize;
    for &(x, y, z) in &points.points {
        let col = x.floor();
        let row = y.floor();
        if col < 0.0 || row < 0.0 || col >= n_azimuth as f64 || row >= n_range as f64 {
            dropped += 1;
            continue;
        }
        let idx = row as usize * n_azimuth + col as usize;
        let cell = &mut heights[idx];
        if cell.is_nan() || f64::from(*cell) < z {
            *cell = z as f32;
        }
    }
    Ok((HeightRaster::new(n_range, n_azimuth, heights)?, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    fn tiny_cube(n_range: usize, n_azimuth: usize, n_height: usize, channels: Vec<PolChannel>, heading: Heading, seed: u64) -> TomoCube {
        let mut rng = stream_rng(seed, 0);
        let block = n_height * channels.len();
        let n_px = n_range * n_azimuth;
        let intensity: Vec<f32> = (0..n_px * block).map(|_| rng.random::<f32>() * 4.0).collect();
        TomoCube::new(
            n_range,
            n_azimuth,
            n_height,
            channels,
            -10.0,
            2.0,
            "P".into(),
            heading,
            intensity,
            vec![true; n_px],
        )
        .unwrap()
    }

    #[test]
    fn survey_scale_header_round_trips() {
        // 326 x 840 x 36 x 3 all-zero payload with the survey geometry.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.tomo");
        let n = 326 * 840 * 36 * 3;
        let cube = TomoCube::new(
            326,
            840,
            36,
            PolChannel::ALL.to_vec(),
            -10.0,
            2.0,
            "P".into(),
            Heading::Nw,
            vec![0f32; n],
            vec![true; 326 * 840],
        )
        .unwrap();
        write_cube(&cube, &path).unwrap();
        let back = read_cube(&path).unwrap();
        assert_eq!(back.n_range, 326);
        assert_eq!(back.n_azimuth, 840);
        assert_eq!(back.n_height, 36);
        assert_eq!(back.channels, PolChannel::ALL.to_vec());
        assert_eq!(back.height_min_m, -10.0);
        assert_eq!(back.height_step_m, 2.0);
        assert_eq!(back.band, "P");
        assert_eq!(back.heading, Heading::Nw);
    }

    #[test]
    fn minimal_single_voxel_cube() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.tomo");
        let cube = TomoCube::new(
            1,
            1,
            1,
            vec![PolChannel::Hh],
            0.0,
            1.0,
            "X".into(),
            Heading::Se,
            vec![0.0],
            vec![true],
        )
        .unwrap();
        write_cube(&cube, &path).unwrap();
        let back = read_cube(&path).unwrap();
        assert_eq!(back.intensity(), &[0.0]);
        assert!(back.is_valid(0, 0));
    }

    #[test]
    fn random_cube_round_trip_is_byte_exact() {
        // Write, read, write again: the two files must be identical bytes.
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.tomo");
        let p2 = dir.path().join("b.tomo");
        let cube = tiny_cube(8, 8, 6, vec![PolChannel::Hh, PolChannel::Vv], Heading::Nw, 42);
        write_cube(&cube, &p1).unwrap();
        let back = read_cube(&p1).unwrap();
        write_cube(&back, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tomo");
        std::fs::write(&path, b"NOPE!\0rest").unwrap();
        assert!(matches!(read_cube(&path), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.tomo");
        let cube = tiny_cube(4, 4, 3, vec![PolChannel::Hv], Heading::Nw, 1);
        write_cube(&cube, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(read_cube(&path), Err(Error::Truncated(_))));
        // Extra trailing bytes are rejected too.
        let mut long = bytes.clone();
        long.extend([0u8; 3]);
        std::fs::write(&path, &long).unwrap();
        assert!(matches!(read_cube(&path), Err(Error::Truncated(_))));
    }

    #[test]
    fn negative_height_step_is_a_header_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("step.tomo");
        let cube = tiny_cube(2, 2, 2, vec![PolChannel::Hh], Heading::Nw, 2);
        write_cube(&cube, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // height_step_m sits after magic(6) + 4 u32 dims + f32 height_min.
        let off = 6 + 16 + 4;
        bytes[off..off + 4].copy_from_slice(&(-2.0f32).to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_cube(&path), Err(Error::Header(_))));
    }

    #[test]
    fn negative_intensity_is_a_domain_error() {
        let err = TomoCube::new(
            1,
            1,
            2,
            vec![PolChannel::Hh],
            0.0,
            1.0,
            "P".into(),
            Heading::Nw,
            vec![1.0, -0.5],
            vec![true],
        );
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn merge_takes_single_source_mean_and_nodata() {
        let channels = vec![PolChannel::Hh];
        let mk = |heading: Heading, vals: [f32; 3], valid: [bool; 3]| {
            TomoCube::new(
                1,
                3,
                1,
                channels.clone(),
                0.0,
                1.0,
                "P".into(),
                heading,
                vals.to_vec(),
                valid.to_vec(),
            )
            .unwrap()
        };
        // Pixel 0: NW only (3.0); pixel 1: both (2.0, 4.0); pixel 2: neither.
        let nw = mk(Heading::Nw, [3.0, 2.0, 1.0], [true, true, false]);
        let se = mk(Heading::Se, [9.0, 4.0, 1.0], [false, true, false]);
        let merged = merge_headings(&nw, &se).unwrap();
        assert_eq!(merged.heading, Heading::Merged);
        assert_eq!(merged.value(0, 0, 0, 0), 3.0);
        assert_eq!(merged.value(0, 1, 0, 0), 3.0);
        assert!(!merged.is_valid(0, 2));
        assert!(merged.value(0, 2, 0, 0).is_nan());
    }

    #[test]
    fn merge_is_symmetric_up_to_heading_tags() {
        let nw = tiny_cube(5, 7, 4, vec![PolChannel::Hh, PolChannel::Hv], Heading::Nw, 3);
        let se = tiny_cube(5, 7, 4, vec![PolChannel::Hh, PolChannel::Hv], Heading::Se, 4);
        let ab = merge_headings(&nw, &se).unwrap();
        // Swap the payloads across headings: voxel-wise the mean is symmetric.
        let nw2 = TomoCube::new(5, 7, 4, nw.channels.clone(), -10.0, 2.0, "P".into(), Heading::Nw, se.intensity().to_vec(), vec![true; 35]).unwrap();
        let se2 = TomoCube::new(5, 7, 4, nw.channels.clone(), -10.0, 2.0, "P".into(), Heading::Se, nw.intensity().to_vec(), vec![true; 35]).unwrap();
        let ba = merge_headings(&nw2, &se2).unwrap();
        assert_eq!(ab.intensity(), ba.intensity());
    }

    #[test]
    fn merge_rejects_shape_and_heading_mismatches() {
        let nw = tiny_cube(2, 2, 2, vec![PolChannel::Hh], Heading::Nw, 5);
        let se_small = tiny_cube(2, 3, 2, vec![PolChannel::Hh], Heading::Se, 6);
        assert!(matches!(merge_headings(&nw, &se_small), Err(Error::Shape(_))));
        let also_nw = tiny_cube(2, 2, 2, vec![PolChannel::Hh], Heading::Nw, 7);
        assert!(matches!(merge_headings(&nw, &also_nw), Err(Error::Parameter(_))));
    }

    #[test]
    fn species_map_of_ones_is_aspen_everywhere() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ones.lbl");
        write_label_raster(3, 4, &[1u8; 12], &path).unwrap();
        let map = read_species_map(&path).unwrap();
        assert!(map.labels().iter().all(|&l| l == 1));
        let entry = map.entry(1).unwrap();
        assert_eq!(entry.code, "AA0");
        assert_eq!(entry.name, "Aspen forest");
        assert_eq!(map.class_counts(), vec![(1, 12)]);
    }

    #[test]
    fn species_map_of_zeros_has_no_ground_truth() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zeros.lbl");
        write_label_raster(2, 2, &[0u8; 4], &path).unwrap();
        let map = read_species_map(&path).unwrap();
        assert_eq!(map.n_labeled(), 0);
        assert!(map.class_counts().is_empty());
    }

    #[test]
    fn species_map_counts_match_direct_scan() {
        let labels = vec![1, 1, 1, 5, 0, 0];
        let map = SpeciesMap::new(2, 3, labels).unwrap();
        assert_eq!(map.class_counts(), vec![(1, 3), (5, 1)]);
        assert_eq!(map.n_labeled(), 4);
    }

    #[test]
    fn labels_above_eight_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.lbl");
        write_label_raster(1, 2, &[1u8, 9u8], &path).unwrap();
        assert!(matches!(read_species_map(&path), Err(Error::Domain(_))));
    }

    #[test]
    fn rasterize_takes_cell_max() {
        let pts = LidarPoints::new(vec![(0.5, 0.5, 10.0), (0.5, 0.6, 15.0)]).unwrap();
        let (raster, dropped) = rasterize_lidar(&pts, 2, 2).unwrap();
        assert_eq!(dropped, 0);
        assert_eq!(raster.get(0, 0), Some(15.0));
        assert_eq!(raster.get(1, 1), None);
    }

    #[test]
    fn rasterize_of_nothing_is_all_nodata() {
        let (raster, dropped) = rasterize_lidar(&LidarPoints::default(), 3, 3).unwrap();
        assert_eq!(dropped, 0);
        assert!(raster.heights().iter().all(|h| h.is_nan()));
    }

    #[test]
    fn rasterize_matches_direct_max_and_drops_outside() {
        let mut rng = stream_rng(9, 0);
        let mut pts = Vec::new();
        for _ in 0..100 {
            pts.push((rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>() * 30.0));
        }
        let direct_max = pts.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
        pts.push((-1.0, 0.5, 99.0));
        pts.push((0.5, 7.5, 99.0));
        let (raster, dropped) = rasterize_lidar(&LidarPoints::new(pts).unwrap(), 4, 4).unwrap();
        assert_eq!(dropped, 2);
        let cell = raster.get(0, 0).unwrap();
        assert!((cell - direct_max).abs() < 1e-6);
        // Output never exceeds the max z of the kept points.
        for h in raster.heights() {
            if !h.is_nan() {
                assert!(f64::from(*h) <= direct_max + 1e-6);
            }
        }
    }

    #[test]
    fn lidar_text_round_trips_and_skips_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pts.txt");
        std::fs::write(&path, "# header\n1.5 2.5 10.0\n\n3 4 5 # inline comment\n").unwrap();
        let pts = read_lidar(&path).unwrap();
        assert_eq!(pts.points, vec![(1.5, 2.5, 10.0), (3.0, 4.0, 5.0)]);
        let out = dir.path().join("out.txt");
        write_lidar(&pts, &out).unwrap();
        let back = read_lidar(&out).unwrap();
        assert_eq!(back.points, pts.points);
    }

    #[test]
    fn malformed_lidar_line_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "1.0 2.0\n").unwrap();
        assert!(matches!(read_lidar(&path), Err(Error::Parse(_))));
    }

    #[test]
    fn reference_proportions_sum_to_one() {
        let p = reference_proportions();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[0] - 0.6034).abs() < 5e-4);
    }
}
