//! Frame directories in, normalized sequences and paired patch datasets out.
//!
//! Frame files are named `frame_NNNN.png` (or `.tif`/`.tiff`), 8- or 16-bit
//! grayscale. An optional suffix after the digits (`frame_0003_pred.png`)
//! is allowed and ignored when parsing the index.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{DynamicImage, ImageBuffer, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StganError};
use crate::types::{make_causal_window, CausalWindow, Direction, Domain, Frame, VideoSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

/// Maps a raw integer sample to model space `[-1, 1]`.
pub fn normalize(raw: u16, depth: BitDepth) -> f64 {
    raw as f64 / depth.max_value() as f64 * 2.0 - 1.0
}

/// Inverse of [`normalize`], rounding to the nearest integer level.
pub fn denormalize(x: f64, depth: BitDepth) -> u16 {
    let max = depth.max_value() as f64;
    ((x.clamp(-1.0, 1.0) + 1.0) * 0.5 * max).round() as u16
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawFrameFile {
    pub path: PathBuf,
    pub bit_depth: BitDepth,
    pub index: i64,
}

/// Index encoded in a frame file name, if it follows the naming convention.
pub fn parse_frame_index(path: &Path) -> Option<i64> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    if !matches!(ext.as_str(), "png" | "tif" | "tiff") {
        return None;
    }
    let stem = path.file_stem()?.to_str()?;
    let rest = stem.strip_prefix("frame_")?;
    let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return None;
    }
    digits.parse().ok()
}

fn frame_paths(dir: &Path) -> Result<Vec<(i64, PathBuf)>> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if let Some(index) = parse_frame_index(&path) {
            found.push((index, path));
        }
    }
    found.sort();
    Ok(found)
}

fn read_raw(path: &Path) -> Result<(RawFrameFile, Vec<u16>, u32, u32)> {
    let img = image::open(path).map_err(|source| StganError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let index = parse_frame_index(path).unwrap_or(0);
    let (w, h) = (img.width(), img.height());
    let (depth, data) = match img {
        DynamicImage::ImageLuma8(buf) => (BitDepth::Eight, buf.into_raw().into_iter().map(u16::from).collect()),
        DynamicImage::ImageLuma16(buf) => (BitDepth::Sixteen, buf.into_raw()),
        _ => return Err(StganError::UnsupportedBitDepth(path.to_path_buf())),
    };
    let raw = RawFrameFile {
        path: path.to_path_buf(),
        bit_depth: depth,
        index,
    };
    Ok((raw, data, w, h))
}

/// Loads a directory of frames as one sequence, returning the bit depth too.
pub fn load_sequence_with_depth(dir: &Path, domain: Domain) -> Result<(VideoSequence, BitDepth)> {
    let paths = frame_paths(dir)?;
    if paths.is_empty() {
        return Err(StganError::EmptyDirectory(dir.to_path_buf()));
    }
    for pair in paths.windows(2) {
        if pair[1].0 == pair[0].0 {
            return Err(StganError::config("frames", format!("duplicate frame index {}", pair[0].0)));
        }
        if pair[1].0 != pair[0].0 + 1 {
            return Err(StganError::NonContiguousIndices { missing: pair[0].0 + 1 });
        }
    }
    let mut frames = Vec::with_capacity(paths.len());
    let mut depth = None;
    let mut dims = None;
    for (pos, (_, path)) in paths.iter().enumerate() {
        let (raw, data, w, h) = read_raw(path)?;
        match depth {
            None => depth = Some(raw.bit_depth),
            Some(d) if d != raw.bit_depth => return Err(StganError::UnsupportedBitDepth(path.clone())),
            _ => {}
        }
        match dims {
            None => dims = Some((w, h)),
            Some(d) if d != (w, h) => return Err(StganError::MixedDimensions(dir.to_path_buf())),
            _ => {}
        }
        let pixels = data.iter().map(|v| normalize(*v, raw.bit_depth)).collect();
        frames.push(Frame::new(pixels, h as usize, w as usize, pos, domain)?);
    }
    let source_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok((VideoSequence::new(frames, domain, source_id)?, depth.expect("non-empty")))
}

pub fn load_sequence(dir: &Path, domain: Domain) -> Result<VideoSequence> {
    load_sequence_with_depth(dir, domain).map(|(seq, _)| seq)
}

/// File name for frame `index` with an optional suffix (`"_pred"`).
pub fn frame_file_name(index: usize, suffix: &str) -> String {
    format!("frame_{index:04}{suffix}.png")
}

/// Writes every frame as a grayscale PNG; returns the written paths.
pub fn write_sequence(seq: &VideoSequence, dir: &Path, depth: BitDepth, suffix: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::with_capacity(seq.len());
    for f in seq.frames() {
        let path = dir.join(frame_file_name(f.t, suffix));
        let (h, w) = f.dims();
        let result = match depth {
            BitDepth::Eight => {
                let data: Vec<u8> = f.pixels().iter().map(|p| denormalize(*p, depth) as u8).collect();
                ImageBuffer::<Luma<u8>, _>::from_raw(w as u32, h as u32, data)
                    .expect("buffer size matches")
                    .save(&path)
            }
            BitDepth::Sixteen => {
                let data: Vec<u16> = f.pixels().iter().map(|p| denormalize(*p, depth)).collect();
                ImageBuffer::<Luma<u16>, _>::from_raw(w as u32, h as u32, data)
                    .expect("buffer size matches")
                    .save(&path)
            }
        };
        result.map_err(|source| StganError::Image {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}

fn reindex(frames: &[Frame], domain: Domain, source_id: &str) -> Result<VideoSequence> {
    let frames = frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let mut f = f.clone();
            f.t = i;
            f
        })
        .collect();
    VideoSequence::new(frames, domain, source_id)
}

/// Trims both sequences so that position `i` in each refers to causally
/// corresponding frames. Positive `s` means V lags U by `s` frames.
pub fn align_time_shift(u: &VideoSequence, v: &VideoSequence, s: i64) -> Result<(VideoSequence, VideoSequence)> {
    let len = u.len().min(v.len());
    let shift = s.unsigned_abs() as usize;
    if shift >= len {
        return Err(StganError::ShiftTooLarge { shift: s, len });
    }
    let out_len = len - shift;
    let (u_start, v_start) = if s >= 0 { (0, shift) } else { (shift, 0) };
    Ok((
        reindex(&u.frames()[u_start..u_start + out_len], u.domain, &u.source_id)?,
        reindex(&v.frames()[v_start..v_start + out_len], v.domain, &v.source_id)?,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// Top-left corner of a square crop and the region it was drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropOrigin {
    pub region: Split,
    pub x: usize,
    pub y: usize,
}

/// Rectangle `[x0, x1) x [y0, y1)` in frame pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

/// A window: crop origin plus target position; inputs are `t+1-tau ..= t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowRef {
    pub origin: usize,
    pub t: usize,
}

/// Paired crops of both channels over one causal window.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedWindow {
    pub u: Vec<Frame>,
    pub v: Vec<Frame>,
}

#[derive(Clone, Debug)]
pub struct PatchDataset {
    pub split: Split,
    pub seed: u64,
    pub crop: usize,
    pub tau: usize,
    pub crop_origins: Vec<CropOrigin>,
    pub windows: Vec<WindowRef>,
    u: Arc<VideoSequence>,
    v: Arc<VideoSequence>,
}

impl PatchDataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn sequences(&self) -> (&VideoSequence, &VideoSequence) {
        (&self.u, &self.v)
    }

    fn crops(&self, seq: &VideoSequence, w: WindowRef) -> Vec<Frame> {
        let o = self.crop_origins[w.origin];
        (w.t + 1 - self.tau..=w.t)
            .map(|t| seq.frame(t).crop(o.y, o.x, self.crop, self.crop).expect("origin validated"))
            .collect()
    }

    pub fn window(&self, i: usize) -> PairedWindow {
        let w = self.windows[i];
        PairedWindow {
            u: self.crops(&self.u, w),
            v: self.crops(&self.v, w),
        }
    }

    /// Appends the window's U and V crops (frame-major) to the buffers.
    pub fn extend_window(&self, i: usize, u_out: &mut Vec<f64>, v_out: &mut Vec<f64>) {
        let w = self.windows[i];
        let o = self.crop_origins[w.origin];
        for t in w.t + 1 - self.tau..=w.t {
            for (seq, out) in [(&self.u, &mut *u_out), (&self.v, &mut *v_out)] {
                let f = seq.frame(t);
                for y in o.y..o.y + self.crop {
                    let row = y * f.width() + o.x;
                    out.extend_from_slice(&f.pixels()[row..row + self.crop]);
                }
            }
        }
    }

    /// Window `i` as a causal window in the given direction.
    pub fn causal_window(&self, i: usize, direction: Direction) -> Result<CausalWindow> {
        let pw = self.window(i);
        let u = VideoSequence::new(pw.u, Domain::U, self.u.source_id.clone())?;
        let v = VideoSequence::new(pw.v, Domain::V, self.v.source_id.clone())?;
        // positions inside the cropped run are 0..tau
        make_causal_window(&u, &v, self.tau - 1, self.tau, 0, direction)
    }

    /// Crop origins of this split, as full-length cropped sequences.
    pub fn origin_sequences(&self, origin: usize) -> Result<(VideoSequence, VideoSequence)> {
        let o = self.crop_origins[origin];
        Ok((self.u.crop(o.y, o.x, self.crop)?, self.v.crop(o.y, o.x, self.crop)?))
    }

    fn manifest_part(&self) -> SplitManifest {
        SplitManifest {
            origins: self.crop_origins.clone(),
            windows: self.windows.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub origins: Vec<CropOrigin>,
    pub windows: Vec<WindowRef>,
}

/// Everything needed to rebuild a train/val pair from the same frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub crop: usize,
    pub tau: usize,
    pub split_rule: String,
    pub grid_origins: bool,
    pub frame_height: usize,
    pub frame_width: usize,
    pub length: usize,
    pub u_source: String,
    pub v_source: String,
    pub train_region: Region,
    pub val_region: Option<Region>,
    pub train: SplitManifest,
    pub val: SplitManifest,
}

pub const SPLIT_RULE: &str = "spatially disjoint train/val strips within each movie";

#[derive(Clone, Debug)]
pub struct PatchOptions {
    pub crop: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub tau: usize,
    pub seed: u64,
    /// Regular grid of origins instead of uniform random sampling.
    pub grid: bool,
}

fn split_regions(h: usize, w: usize, crop: usize, n_train: usize, n_val: usize) -> Result<(Region, Option<Region>)> {
    let full = Region {
        x0: 0,
        x1: w,
        y0: 0,
        y1: h,
    };
    if n_val == 0 {
        return Ok((full, None));
    }
    let frac = n_val as f64 / (n_train + n_val) as f64;
    // split along the longer axis
    let along_x = w >= h;
    let extent = if along_x { w } else { h };
    let val_len = ((extent as f64 * frac).round() as usize).max(crop);
    if extent < val_len + crop {
        return Err(StganError::InsufficientArea(format!(
            "{h}x{w} frames cannot hold disjoint {crop}px train and val strips"
        )));
    }
    let cut = extent - val_len;
    Ok(if along_x {
        (Region { x1: cut, ..full }, Some(Region { x0: cut, ..full }))
    } else {
        (Region { y1: cut, ..full }, Some(Region { y0: cut, ..full }))
    })
}

fn sample_origins(region: Region, split: Split, count: usize, crop: usize, grid: bool, rng: &mut ChaCha8Rng) -> Vec<CropOrigin> {
    let (max_x, max_y) = (region.x1 - crop, region.y1 - crop);
    if grid {
        let xs: Vec<usize> = (region.x0..=max_x).step_by(crop).collect();
        let ys: Vec<usize> = (region.y0..=max_y).step_by(crop).collect();
        let cells: Vec<(usize, usize)> = ys.iter().flat_map(|y| xs.iter().map(move |x| (*x, *y))).collect();
        (0..count)
            .map(|i| {
                let (x, y) = cells[i % cells.len()];
                CropOrigin { region: split, x, y }
            })
            .collect()
    } else {
        (0..count)
            .map(|_| CropOrigin {
                region: split,
                x: rng.random_range(region.x0..=max_x),
                y: rng.random_range(region.y0..=max_y),
            })
            .collect()
    }
}

fn windows_for(n_windows: usize, n_origins: usize, tau: usize, len: usize) -> Vec<WindowRef> {
    (0..n_origins)
        .flat_map(|origin| (tau - 1..len).map(move |t| WindowRef { origin, t }))
        .take(n_windows)
        .collect()
}

/// Builds paired train/val datasets of `n_train`/`n_val` windows.
///
/// Each crop origin contributes every causal window over time; the same
/// origin is applied to both channels. Train and val origins come from
/// disjoint strips of the frame, so no val pixel is ever seen in training.
pub fn extract_patches(u: &VideoSequence, v: &VideoSequence, opts: &PatchOptions) -> Result<(PatchDataset, PatchDataset)> {
    if opts.tau < 2 {
        return Err(StganError::TauTooSmall(opts.tau));
    }
    if u.domain != Domain::U || v.domain != Domain::V {
        return Err(StganError::DomainMismatch("extract_patches expects (U, V) sequences".into()));
    }
    let (h, w) = u.dims().ok_or_else(|| StganError::shape("empty sequence"))?;
    if v.dims() != Some((h, w)) || u.len() != v.len() {
        return Err(StganError::shape("paired sequences must share shape and length"));
    }
    if opts.crop > h || opts.crop > w {
        return Err(StganError::CropTooLarge {
            crop: opts.crop,
            height: h,
            width: w,
        });
    }
    if u.len() < opts.tau {
        return Err(StganError::SequenceTooShort {
            len: u.len(),
            tau: opts.tau,
        });
    }
    let (train_region, val_region) = split_regions(h, w, opts.crop, opts.n_train, opts.n_val)?;
    let per_origin = u.len() + 1 - opts.tau;
    let u = Arc::new(u.clone());
    let v = Arc::new(v.clone());
    let build = |split: Split, region: Region, n: usize, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_origins = n.div_ceil(per_origin);
        let crop_origins = sample_origins(region, split, n_origins, opts.crop, opts.grid, &mut rng);
        PatchDataset {
            split,
            seed: opts.seed,
            crop: opts.crop,
            tau: opts.tau,
            windows: windows_for(n, n_origins, opts.tau, u.len()),
            crop_origins,
            u: Arc::clone(&u),
            v: Arc::clone(&v),
        }
    };
    let train = build(Split::Train, train_region, opts.n_train, opts.seed);
    let val = match val_region {
        Some(r) => build(Split::Val, r, opts.n_val, opts.seed ^ 0x7f4a_7c15_9e37_79b9),
        None => build(Split::Val, train_region, 0, opts.seed),
    };
    Ok((train, val))
}

pub fn manifest(train: &PatchDataset, val: &PatchDataset, grid: bool) -> DatasetManifest {
    let (h, w) = train.u.dims().unwrap_or((0, 0));
    let bounds = |d: &PatchDataset| {
        d.crop_origins.iter().fold(None, |acc: Option<Region>, o| {
            let r = Region {
                x0: o.x,
                x1: o.x + d.crop,
                y0: o.y,
                y1: o.y + d.crop,
            };
            Some(match acc {
                None => r,
                Some(a) => Region {
                    x0: a.x0.min(r.x0),
                    x1: a.x1.max(r.x1),
                    y0: a.y0.min(r.y0),
                    y1: a.y1.max(r.y1),
                },
            })
        })
    };
    DatasetManifest {
        seed: train.seed,
        crop: train.crop,
        tau: train.tau,
        split_rule: SPLIT_RULE.into(),
        grid_origins: grid,
        frame_height: h,
        frame_width: w,
        length: train.u.len(),
        u_source: train.u.source_id.clone(),
        v_source: train.v.source_id.clone(),
        train_region: bounds(train).unwrap_or(Region {
            x0: 0,
            x1: 0,
            y0: 0,
            y1: 0,
        }),
        val_region: bounds(val),
        train: train.manifest_part(),
        val: val.manifest_part(),
    }
}

/// Rebuilds the datasets a manifest describes from the same sequences.
pub fn from_manifest(m: &DatasetManifest, u: &VideoSequence, v: &VideoSequence) -> Result<(PatchDataset, PatchDataset)> {
    if u.dims() != Some((m.frame_height, m.frame_width)) || u.len() != m.length || v.len() != m.length {
        return Err(StganError::shape("sequences do not match the manifest"));
    }
    let u = Arc::new(u.clone());
    let v = Arc::new(v.clone());
    let build = |split: Split, part: &SplitManifest| -> Result<PatchDataset> {
        for o in &part.origins {
            if o.x + m.crop > m.frame_width || o.y + m.crop > m.frame_height {
                return Err(StganError::shape("manifest origin exits the frame"));
            }
        }
        for w in &part.windows {
            if w.origin >= part.origins.len() || w.t + 1 < m.tau || w.t >= m.length {
                return Err(StganError::IndexOutOfRange(format!("manifest window {w:?}")));
            }
        }
        Ok(PatchDataset {
            split,
            seed: m.seed,
            crop: m.crop,
            tau: m.tau,
            crop_origins: part.origins.clone(),
            windows: part.windows.clone(),
            u: Arc::clone(&u),
            v: Arc::clone(&v),
        })
    };
    Ok((build(Split::Train, &m.train)?, build(Split::Val, &m.val)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(domain: Domain, len: usize, side: usize) -> VideoSequence {
        let frames = (0..len)
            .map(|t| {
                let pixels = (0..side * side).map(|i| ((i + t * 7) % 255) as f64 / 127.0 - 1.0).collect();
                Frame::new(pixels, side, side, t, domain).unwrap()
            })
            .collect();
        VideoSequence::new(frames, domain, format!("{domain:?}")).unwrap()
    }

    #[test]
    fn normalization_round_trip() {
        for raw in 0..=255u16 {
            assert_eq!(denormalize(normalize(raw, BitDepth::Eight), BitDepth::Eight), raw);
        }
        for raw in (0..=65535u16).step_by(13).chain([65535]) {
            assert_eq!(denormalize(normalize(raw, BitDepth::Sixteen), BitDepth::Sixteen), raw);
        }
        assert_eq!(normalize(255, BitDepth::Eight), 1.0);
        assert_eq!(normalize(0, BitDepth::Eight), -1.0);
    }

    #[test]
    fn frame_index_parsing() {
        assert_eq!(parse_frame_index(Path::new("a/frame_0012.png")), Some(12));
        assert_eq!(parse_frame_index(Path::new("frame_0003_pred.tif")), Some(3));
        assert_eq!(parse_frame_index(Path::new("frame_x.png")), None);
        assert_eq!(parse_frame_index(Path::new("frame_0001.jpg")), None);
    }

    #[test]
    fn load_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let s = seq(Domain::U, 5, 16);
        write_sequence(&s, dir.path(), BitDepth::Sixteen, "").unwrap();
        let (back, depth) = load_sequence_with_depth(dir.path(), Domain::U).unwrap();
        assert_eq!(depth, BitDepth::Sixteen);
        assert_eq!(back.len(), 5);
        for (a, b) in s.frames().iter().zip(back.frames()) {
            for (x, y) in a.pixels().iter().zip(b.pixels()) {
                assert!((x - y).abs() <= 1.0 / 65535.0);
            }
        }

        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(load_sequence(empty.path(), Domain::U), Err(StganError::EmptyDirectory(_))));

        let gap = tempfile::tempdir().unwrap();
        write_sequence(&seq(Domain::U, 1, 16), gap.path(), BitDepth::Eight, "").unwrap();
        std::fs::rename(gap.path().join("frame_0000.png"), gap.path().join("frame_0002.png")).unwrap();
        write_sequence(&seq(Domain::U, 1, 16), gap.path(), BitDepth::Eight, "").unwrap();
        assert!(matches!(
            load_sequence(gap.path(), Domain::U),
            Err(StganError::NonContiguousIndices { missing: 1 })
        ));

        let mixed = tempfile::tempdir().unwrap();
        write_sequence(&seq(Domain::U, 1, 16), mixed.path(), BitDepth::Eight, "").unwrap();
        let big = seq(Domain::U, 2, 20);
        write_sequence(
            &VideoSequence::new(vec![{
                let mut f = big.frame(1).clone();
                f.t = 1;
                f
            }], Domain::U, "b")
            .unwrap(),
            mixed.path(),
            BitDepth::Eight,
            "",
        )
        .unwrap();
        assert!(matches!(load_sequence(mixed.path(), Domain::U), Err(StganError::MixedDimensions(_))));
    }

    #[test]
    fn eight_bit_endpoints_load_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut data = vec![0u8; 256];
        data[1] = 255;
        ImageBuffer::<Luma<u8>, _>::from_raw(16, 16, data)
            .unwrap()
            .save(dir.path().join("frame_0000.png"))
            .unwrap();
        let s = load_sequence(dir.path(), Domain::V).unwrap();
        assert_eq!(s.frame(0).pixels()[0], -1.0);
        assert_eq!(s.frame(0).pixels()[1], 1.0);
    }

    #[test]
    fn sixteen_bit_tiff_loads() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<u16> = (0..256).map(|i| i * 200).collect();
        ImageBuffer::<Luma<u16>, _>::from_raw(16, 16, data.clone())
            .unwrap()
            .save(dir.path().join("frame_0000.tif"))
            .unwrap();
        let (s, depth) = load_sequence_with_depth(dir.path(), Domain::U).unwrap();
        assert_eq!(depth, BitDepth::Sixteen);
        assert_eq!(denormalize(s.frame(0).pixels()[10], depth), data[10]);
    }

    #[test]
    fn time_shift_alignment() {
        let (u, v) = (seq(Domain::U, 60, 16), seq(Domain::V, 60, 16));
        let (au, av) = align_time_shift(&u, &v, 0).unwrap();
        assert_eq!((au.len(), av.len()), (60, 60));
        assert_eq!(au.frame(7).pixels(), u.frame(7).pixels());
        let (au, av) = align_time_shift(&u, &v, 2).unwrap();
        assert_eq!((au.len(), av.len()), (58, 58));
        assert_eq!(au.frame(0).pixels(), u.frame(0).pixels());
        assert_eq!(av.frame(0).pixels(), v.frame(2).pixels());
        assert_eq!(av.frame(57).pixels(), v.frame(59).pixels());
        let (su, sv) = (seq(Domain::U, 10, 16), seq(Domain::V, 10, 16));
        assert!(matches!(align_time_shift(&su, &sv, 10), Err(StganError::ShiftTooLarge { .. })));
    }

    fn opts(crop: usize, n_train: usize, n_val: usize, seed: u64) -> PatchOptions {
        PatchOptions {
            crop,
            n_train,
            n_val,
            tau: 3,
            seed,
            grid: false,
        }
    }

    #[test]
    fn patch_counts_and_determinism() {
        let (u, v) = (seq(Domain::U, 60, 512), seq(Domain::V, 60, 512));
        let (train, val) = extract_patches(&u, &v, &opts(128, 4000, 1000, 7)).unwrap();
        assert_eq!((train.len(), val.len()), (4000, 1000));
        let (train2, val2) = extract_patches(&u, &v, &opts(128, 4000, 1000, 7)).unwrap();
        assert_eq!(train.crop_origins, train2.crop_origins);
        assert_eq!(val.crop_origins, val2.crop_origins);
        assert_eq!(train.windows, train2.windows);
        // spatial disjointness
        for a in &train.crop_origins {
            for b in &val.crop_origins {
                let overlap_x = a.x < b.x + 128 && b.x < a.x + 128;
                let overlap_y = a.y < b.y + 128 && b.y < a.y + 128;
                assert!(!(overlap_x && overlap_y), "{a:?} overlaps {b:?}");
            }
        }
        assert!(matches!(
            extract_patches(&u, &v, &opts(600, 10, 1, 7)),
            Err(StganError::CropTooLarge { .. })
        ));
        let (su, sv) = (seq(Domain::U, 10, 64), seq(Domain::V, 10, 64));
        assert!(matches!(
            extract_patches(&su, &sv, &opts(48, 10, 10, 1)),
            Err(StganError::InsufficientArea(_))
        ));
    }

    #[test]
    fn patches_are_paired_and_manifest_rebuilds() {
        let (u, v) = (seq(Domain::U, 8, 96), seq(Domain::V, 8, 96));
        let (train, val) = extract_patches(&u, &v, &opts(32, 20, 6, 3)).unwrap();
        for i in 0..train.len() {
            let w = train.windows[i];
            let o = train.crop_origins[w.origin];
            let pw = train.window(i);
            assert_eq!(pw.u.len(), 3);
            for (k, t) in (w.t - 2..=w.t).enumerate() {
                assert_eq!(pw.u[k], u.frame(t).crop(o.y, o.x, 32, 32).unwrap());
                assert_eq!(pw.v[k], v.frame(t).crop(o.y, o.x, 32, 32).unwrap());
            }
        }
        let m = manifest(&train, &val, false);
        let json = serde_json::to_string(&m).unwrap();
        let m2: DatasetManifest = serde_json::from_str(&json).unwrap();
        let (t2, v2) = from_manifest(&m2, &u, &v).unwrap();
        for i in 0..train.len() {
            assert_eq!(train.window(i), t2.window(i));
        }
        for i in 0..val.len() {
            assert_eq!(val.window(i), v2.window(i));
        }
        let cw = train.causal_window(0, Direction::V2U).unwrap();
        assert_eq!(cw.inputs.len(), 3);
        assert_eq!(cw.target.domain, Domain::U);
    }

    #[test]
    fn grid_origins_tile_the_region() {
        let (u, v) = (seq(Domain::U, 4, 64), seq(Domain::V, 4, 64));
        let o = PatchOptions {
            grid: true,
            ..opts(16, 8, 0, 1)
        };
        let (train, val) = extract_patches(&u, &v, &o).unwrap();
        assert!(val.is_empty());
        assert_eq!(train.crop_origins[0], CropOrigin { region: Split::Train, x: 0, y: 0 });
        assert_eq!(train.crop_origins[1], CropOrigin { region: Split::Train, x: 16, y: 0 });
    }
}
