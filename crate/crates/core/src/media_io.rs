//! Frame, disparity and mask containers plus their on-disk formats.
//!
//! Frames are 8-bit RGB images converted to full-range BT.601 YUV on load.
//! Disparity maps are 16-bit grayscale images in the usual fixed-point
//! convention of semi-global matchers: `d = raw / 16`, with `raw == 0`
//! marking an invalid pixel. Masks are 8-bit grayscale, 0 or 255.
//!
//! Files in a sequence directory are named by a zero-padded frame number
//! (`000000.png`, `000001.png`, ...).

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Fixed-point scale of stored disparities.
pub const DISPARITY_SCALE: f64 = 16.0;

/// Digits used when writing numbered files.
pub const INDEX_WIDTH: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    /// Global 0-based frame index.
    pub t: usize,
    /// Row-major `[Y, U, V]` triples.
    pub pixels: Vec<[u8; 3]>,
}

impl Frame {
    pub fn from_rgb(image: &RgbImage, t: usize) -> Self {
        let pixels = image
            .pixels()
            .map(|p| rgb_to_yuv(p[0], p[1], p[2]))
            .collect();
        Frame {
            width: image.width() as usize,
            height: image.height() as usize,
            t,
            pixels,
        }
    }

    pub fn to_rgb(&self) -> RgbImage {
        let mut out = RgbImage::new(self.width as u32, self.height as u32);
        for (dst, yuv) in out.pixels_mut().zip(&self.pixels) {
            let (r, g, b) = yuv_to_rgb(yuv[0], yuv[1], yuv[2]);
            *dst = Rgb([r, g, b]);
        }
        out
    }

    #[inline]
    pub fn yuv(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    pub width: usize,
    pub height: usize,
    /// Row-major disparity in pixels. Meaningless where `valid` is false.
    pub d: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DisparityMap {
    pub fn new(width: usize, height: usize, d: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if d.len() != width * height || valid.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                found: (d.len(), valid.len()),
                context: " (disparity buffer length)".into(),
            });
        }
        if let Some(bad) = d
            .iter()
            .zip(&valid)
            .find(|(v, ok)| **ok && !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::UnsupportedFormat(format!(
                "valid disparity {} is not finite and non-negative",
                bad.0
            )));
        }
        Ok(DisparityMap {
            width,
            height,
            d,
            valid,
        })
    }

    /// A map where every pixel carries the same valid disparity.
    pub fn uniform(width: usize, height: usize, d: f64) -> Self {
        DisparityMap {
            width,
            height,
            d: vec![d; width * height],
            valid: vec![true; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then_some(self.d[i])
    }

    /// Range of valid disparities, `None` when no pixel is valid.
    pub fn valid_range(&self) -> Option<(f64, f64)> {
        self.d
            .iter()
            .zip(&self.valid)
            .filter(|(_, ok)| **ok)
            .fold(None, |acc, (&d, _)| match acc {
                None => Some((d, d)),
                Some((lo, hi)) => Some((lo.min(d), hi.max(d))),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    /// Row-major labels, 1 = foreground.
    pub data: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![1; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, fg: bool) {
        self.data[y * self.width + x] = fg as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn to_image(&self) -> GrayImage {
        let bytes = self.data.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
        GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("mask buffer matches its dimensions")
    }

    /// Gray values above 127 are foreground.
    pub fn from_gray(image: &GrayImage) -> Self {
        BinaryMask {
            width: image.width() as usize,
            height: image.height() as usize,
            data: image.pixels().map(|p| (p[0] > 127) as u8).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StereoSequence {
    pub frames: Vec<Frame>,
    pub disparities: Vec<DisparityMap>,
}

impl StereoSequence {
    pub fn new(frames: Vec<Frame>, disparities: Vec<DisparityMap>) -> Result<Self> {
        if frames.len() != disparities.len() {
            return Err(Error::CountMismatch {
                left: frames.len(),
                right: disparities.len(),
                context: " (frames vs disparity maps)".into(),
            });
        }
        if let Some(first) = frames.first() {
            let dims = (first.width, first.height);
            for (i, (f, d)) in frames.iter().zip(&disparities).enumerate() {
                for found in [(f.width, f.height), (d.width, d.height)] {
                    if found != dims {
                        return Err(Error::DimensionMismatch {
                            expected: dims,
                            found,
                            context: format!(" at frame {i}"),
                        });
                    }
                }
            }
        }
        Ok(StereoSequence {
            frames,
            disparities,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames
            .first()
            .map(|f| (f.width, f.height))
            .unwrap_or((0, 0))
    }
}

/// Full-range BT.601 RGB to YUV, rounded and clamped to `[0, 255]`.
pub fn rgb_to_yuv(r: u8, g: u8, b: u8) -> [u8; 3] {
    let (r, g, b) = (r as f64, g as f64, b as f64);
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let u = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
    let v = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
    [quantize(y), quantize(u), quantize(v)]
}

/// Inverse of [`rgb_to_yuv`] up to quantization.
pub fn yuv_to_rgb(y: u8, u: u8, v: u8) -> (u8, u8, u8) {
    let (y, u, v) = (y as f64, u as f64 - 128.0, v as f64 - 128.0);
    let r = y + 1.402 * v;
    let g = y - 0.344136 * u - 0.714136 * v;
    let b = y + 1.772 * u;
    (quantize(r), quantize(g), quantize(b))
}

#[inline]
fn quantize(x: f64) -> u8 {
    x.round().clamp(0.0, 255.0) as u8
}

/// Decode a 16-bit single-channel fixed-point disparity image.
pub fn decode_disparity(raw: &DynamicImage) -> Result<DisparityMap> {
    match raw {
        DynamicImage::ImageLuma16(img) => Ok(decode_disparity_raw(
            img.width() as usize,
            img.height() as usize,
            img.as_raw(),
        )),
        other => Err(Error::UnsupportedFormat(format!(
            "disparity must be 16-bit single channel, got {:?}",
            other.color()
        ))),
    }
}

pub fn decode_disparity_raw(width: usize, height: usize, raw: &[u16]) -> DisparityMap {
    DisparityMap {
        width,
        height,
        d: raw.iter().map(|&r| r as f64 / DISPARITY_SCALE).collect(),
        valid: raw.iter().map(|&r| r != 0).collect(),
    }
}

/// Encode to the 16-bit fixed-point format. Valid disparities that would
/// round to the invalid sentinel are stored as the smallest valid raw value.
pub fn encode_disparity(dm: &DisparityMap) -> ImageBuffer<Luma<u16>, Vec<u16>> {
    let raw = dm
        .d
        .iter()
        .zip(&dm.valid)
        .map(|(&d, &ok)| {
            if ok {
                (d * DISPARITY_SCALE).round().clamp(1.0, u16::MAX as f64) as u16
            } else {
                0
            }
        })
        .collect();
    ImageBuffer::from_raw(dm.width as u32, dm.height as u32, raw)
        .expect("disparity buffer matches its dimensions")
}

/// File name for frame `index`, e.g. `000042.png`.
pub fn numbered_name(index: usize, ext: &str) -> String {
    format!("{index:0width$}.{ext}", width = INDEX_WIDTH)
}

/// Numbered files of `dir` in index order. Fails on any gap in the numbering.
pub fn list_numbered(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if stem.is_empty() || !stem.bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        if let Ok(index) = stem.parse::<usize>() {
            files.push((index, path));
        }
    }
    files.sort();
    if let Some(&(first, _)) = files.first() {
        for (expected, (index, _)) in (first..).zip(&files) {
            if *index != expected {
                return Err(Error::MissingFile {
                    dir: dir.to_path_buf(),
                    index: expected,
                });
            }
        }
    }
    Ok(files)
}

pub fn load_frame(path: &Path, t: usize) -> Result<Frame> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?;
    Ok(Frame::from_rgb(&img.to_rgb8(), t))
}

pub fn load_disparity(path: &Path) -> Result<DisparityMap> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?;
    decode_disparity(&img).map_err(|e| match e {
        Error::UnsupportedFormat(msg) => {
            Error::UnsupportedFormat(format!("{}: {msg}", path.display()))
        }
        other => other,
    })
}

/// Load the left-view frames and disparity maps of a sequence.
pub fn load_sequence(frame_dir: &Path, disparity_dir: &Path) -> Result<StereoSequence> {
    let frame_files = list_numbered(frame_dir)?;
    let disp_files = list_numbered(disparity_dir)?;
    if frame_files.len() != disp_files.len() {
        return Err(Error::CountMismatch {
            left: frame_files.len(),
            right: disp_files.len(),
            context: format!(
                " ({} vs {})",
                frame_dir.display(),
                disparity_dir.display()
            ),
        });
    }
    for ((fi, _), (di, _)) in frame_files.iter().zip(&disp_files) {
        if fi != di {
            let (dir, index) = if fi < di {
                (disparity_dir, *fi)
            } else {
                (frame_dir, *di)
            };
            return Err(Error::MissingFile {
                dir: dir.to_path_buf(),
                index,
            });
        }
    }

    let frames = frame_files
        .par_iter()
        .enumerate()
        .map(|(t, (_, path))| load_frame(path, t))
        .collect::<Result<Vec<_>>>()?;
    let disparities = disp_files
        .par_iter()
        .map(|(_, path)| load_disparity(path))
        .collect::<Result<Vec<_>>>()?;
    StereoSequence::new(frames, disparities)
}

pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?;
    Ok(BinaryMask::from_gray(&img.to_luma8()))
}

pub fn load_masks(dir: &Path) -> Result<Vec<BinaryMask>> {
    list_numbered(dir)?
        .par_iter()
        .map(|(_, path)| load_mask(path))
        .collect()
}

pub fn write_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    mask.to_image()
        .save(path)
        .map_err(|e| Error::image(path, e))
}

/// Foreground tint blended at alpha 0.5.
pub const OVERLAY_TINT: [u8; 3] = [255, 0, 0];

pub fn overlay_image(frame: &Frame, mask: &BinaryMask) -> Result<RgbImage> {
    if (frame.width, frame.height) != mask.dims() {
        return Err(Error::DimensionMismatch {
            expected: (frame.width, frame.height),
            found: mask.dims(),
            context: " (overlay mask)".into(),
        });
    }
    let mut rgb = frame.to_rgb();
    for (px, &label) in rgb.pixels_mut().zip(&mask.data) {
        if label != 0 {
            for c in 0..3 {
                px[c] = (px[c] as u16 + OVERLAY_TINT[c] as u16).div_ceil(2) as u8;
            }
        }
    }
    Ok(rgb)
}

pub fn write_overlay(frame: &Frame, mask: &BinaryMask, path: &Path) -> Result<()> {
    overlay_image(frame, mask)?
        .save(path)
        .map_err(|e| Error::image(path, e))
}

pub fn write_disparity(dm: &DisparityMap, path: &Path) -> Result<()> {
    encode_disparity(dm)
        .save(path)
        .map_err(|e| Error::image(path, e))
}
