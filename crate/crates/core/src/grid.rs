//! Sparse 7-D bilateral grid over (Y, U, V, x, y, d, t).
//!
//! Pixels are lifted into grid coordinates, then splatted onto their nearest
//! vertex and its axis neighbors with the weight
//! `Π_i max(0, 1 - |v_i - b_i|)`. The neighborhood is the L1 ball of radius
//! one around the nearest vertex, so the weights of one pixel sum to at most
//! one and are not a partition of unity.
//!
//! Each occupied vertex stores its total weight `S`, its disparity
//! affinities `A_FG = Σ ω·d̂` and `A_BG = Σ ω·(1 - d̂)` with `d̂ = b_d / l_d`,
//! and optionally the weights `M_FG`, `M_BG` of a propagated mask.

use std::fmt;
use std::io::{self, Write};

use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::media_io::{BinaryMask, DisparityMap, Frame};
use crate::prior::RoiRect;

pub const NDIM: usize = 7;

/// Axis order used throughout: intensity, two chroma, two spatial,
/// disparity, time.
pub const AXIS_NAMES: [&str; NDIM] = ["Y", "U", "V", "x", "y", "d", "t"];
pub const AXIS_D: usize = 5;
pub const AXIS_T: usize = 6;

const BITS_PER_AXIS: u32 = 8;
/// Largest supported `l_i`, so that `0..=l_i` fits one packed byte.
pub const MAX_CELLS: u32 = 255;

/// Grid sizes per feature group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSize {
    pub intensity: u32,
    pub chroma: u32,
    pub spatial: u32,
    pub temporal: u32,
    pub disparity: u32,
}

impl Default for GridSize {
    fn default() -> Self {
        GridSize {
            intensity: 7,
            chroma: 9,
            spatial: 13,
            temporal: 2,
            disparity: 2,
        }
    }
}

impl GridSize {
    /// `l_i` in axis order.
    pub fn dims(&self) -> [u32; NDIM] {
        [
            self.intensity,
            self.chroma,
            self.chroma,
            self.spatial,
            self.spatial,
            self.disparity,
            self.temporal,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisRange {
    pub min: f64,
    pub max: f64,
}

impl AxisRange {
    pub fn new(min: f64, max: f64) -> Self {
        AxisRange { min, max }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridParams {
    pub dims: [u32; NDIM],
    pub ranges: [AxisRange; NDIM],
}

impl GridParams {
    pub fn new(dims: [u32; NDIM], ranges: [AxisRange; NDIM]) -> Result<Self> {
        for (i, &l) in dims.iter().enumerate() {
            if !(1..=MAX_CELLS).contains(&l) {
                return Err(Error::bad_value(
                    AXIS_NAMES[i],
                    &l.to_string(),
                    &format!("grid size in 1..={MAX_CELLS}"),
                ));
            }
            let r = ranges[i];
            if !(r.min.is_finite() && r.max.is_finite() && r.max >= r.min) {
                return Err(Error::bad_value(
                    AXIS_NAMES[i],
                    &format!("[{}, {}]", r.min, r.max),
                    "finite range with max >= min",
                ));
            }
        }
        Ok(GridParams { dims, ranges })
    }

    /// Ranges for a window: color over `[0, 255]`, space over the ROI,
    /// disparity over `d_range`, time over `t_range`.
    pub fn for_window(
        size: &GridSize,
        roi: &RoiRect,
        d_range: (f64, f64),
        t_range: (f64, f64),
    ) -> Result<Self> {
        let color = AxisRange::new(0.0, 255.0);
        GridParams::new(
            size.dims(),
            [
                color,
                color,
                color,
                AxisRange::new(roi.x0 as f64, roi.x1 as f64),
                AxisRange::new(roi.y0 as f64, roi.y1 as f64),
                AxisRange::new(d_range.0, d_range.1),
                AxisRange::new(t_range.0, t_range.1),
            ],
        )
    }

    /// Sampling rate `l_i / (max - min)`; zero on a degenerate range.
    #[inline]
    pub fn rate(&self, axis: usize) -> f64 {
        let r = self.ranges[axis];
        if r.max > r.min {
            self.dims[axis] as f64 / (r.max - r.min)
        } else {
            0.0
        }
    }

    pub fn cell_count(&self) -> f64 {
        self.dims.iter().map(|&l| (l + 1) as f64).product()
    }
}

/// Raw per-pixel features before lifting. `d` is `None` for an invalid
/// disparity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelSample {
    pub yuv: [u8; 3],
    pub x: f64,
    pub y: f64,
    pub d: Option<f64>,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilateralCoord(pub [f64; NDIM]);

/// Map a pixel into grid coordinates `b_i = γ_i (i - i_min)`, clamping each
/// feature to its range first. Invalid disparity lifts to `b_d = 0`.
pub fn lift(p: &PixelSample, params: &GridParams) -> BilateralCoord {
    let raw = [
        Some(p.yuv[0] as f64),
        Some(p.yuv[1] as f64),
        Some(p.yuv[2] as f64),
        Some(p.x),
        Some(p.y),
        p.d,
        Some(p.t),
    ];
    let mut b = [0.0; NDIM];
    for i in 0..NDIM {
        if let Some(v) = raw[i] {
            let r = params.ranges[i];
            let rate = params.rate(i);
            b[i] = (rate * (v.clamp(r.min, r.max) - r.min)).min(params.dims[i] as f64);
        }
    }
    BilateralCoord(b)
}

/// Packed integer vertex coordinate, one byte per axis with Y most
/// significant, so the natural ordering is lexicographic over axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VertexKey(pub u64);

impl VertexKey {
    #[inline]
    fn shift(axis: usize) -> u32 {
        BITS_PER_AXIS * (NDIM - 1 - axis) as u32
    }

    pub fn from_coords(c: [u32; NDIM]) -> Self {
        let mut k = 0u64;
        for (i, &v) in c.iter().enumerate() {
            debug_assert!(v <= MAX_CELLS);
            k |= (v as u64) << Self::shift(i);
        }
        VertexKey(k)
    }

    #[inline]
    pub fn coord(&self, axis: usize) -> u32 {
        ((self.0 >> Self::shift(axis)) & 0xff) as u32
    }

    pub fn coords(&self) -> [u32; NDIM] {
        std::array::from_fn(|i| self.coord(i))
    }

    /// Neighbor one step up along `axis`. Caller checks bounds.
    #[inline]
    pub fn step_up(&self, axis: usize) -> VertexKey {
        VertexKey(self.0 + (1u64 << Self::shift(axis)))
    }

    #[inline]
    pub fn step_down(&self, axis: usize) -> VertexKey {
        VertexKey(self.0 - (1u64 << Self::shift(axis)))
    }

    /// L1 distance between integer coordinates.
    pub fn l1_distance(&self, other: &VertexKey) -> u32 {
        (0..NDIM)
            .map(|i| self.coord(i).abs_diff(other.coord(i)))
            .sum()
    }
}

impl fmt::Display for VertexKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = self.coords();
        write!(f, "{} {} {} {} {} {} {}", c[0], c[1], c[2], c[3], c[4], c[5], c[6])
    }
}

/// Round half-up per axis, clamped to `[0, l_i]`.
pub fn nearest_vertex(b: &BilateralCoord, dims: &[u32; NDIM]) -> VertexKey {
    VertexKey::from_coords(std::array::from_fn(|i| nearest_index(b.0[i], dims[i])))
}

#[inline]
fn nearest_index(b: f64, l: u32) -> u32 {
    ((b + 0.5).floor().max(0.0) as u32).min(l)
}

/// Call `emit(vertex, ω)` for each vertex with nonzero weight.
#[inline]
pub fn for_each_splat(b: &BilateralCoord, dims: &[u32; NDIM], mut emit: impl FnMut(VertexKey, f64)) {
    let mut n = [0u32; NDIM];
    let mut own = [0.0f64; NDIM];
    for i in 0..NDIM {
        n[i] = nearest_index(b.0[i], dims[i]);
        own[i] = (1.0 - (n[i] as f64 - b.0[i]).abs()).max(0.0);
    }
    // product of the other axes' factors, for each axis
    let mut excl = [1.0f64; NDIM];
    let mut acc = 1.0;
    for i in 0..NDIM {
        excl[i] = acc;
        acc *= own[i];
    }
    let center = acc;
    acc = 1.0;
    for i in (0..NDIM).rev() {
        excl[i] *= acc;
        acc *= own[i];
    }

    let key = VertexKey::from_coords(n);
    if center > 0.0 {
        emit(key, center);
    }
    for i in 0..NDIM {
        if excl[i] == 0.0 {
            continue;
        }
        if n[i] > 0 {
            let f = 1.0 - (n[i] as f64 - 1.0 - b.0[i]).abs();
            if f > 0.0 {
                emit(key.step_down(i), excl[i] * f);
            }
        }
        if n[i] < dims[i] {
            let f = 1.0 - (n[i] as f64 + 1.0 - b.0[i]).abs();
            if f > 0.0 {
                emit(key.step_up(i), excl[i] * f);
            }
        }
    }
}

pub fn splat_weights(b: &BilateralCoord, dims: &[u32; NDIM]) -> Vec<(VertexKey, f64)> {
    let mut out = Vec::with_capacity(2 * NDIM + 1);
    for_each_splat(b, dims, |k, w| out.push((k, w)));
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GridVertex {
    /// Total splat weight.
    pub s: f64,
    pub a_fg: f64,
    pub a_bg: f64,
    pub m_fg: f64,
    pub m_bg: f64,
}

impl GridVertex {
    #[inline]
    fn add_evidence(&mut self, w: f64, d_hat: f64) {
        self.s += w;
        self.a_fg += w * d_hat;
        self.a_bg += w * (1.0 - d_hat);
    }

    #[inline]
    fn merge(&mut self, o: &GridVertex) {
        self.s += o.s;
        self.a_fg += o.a_fg;
        self.a_bg += o.a_bg;
        self.m_fg += o.m_fg;
        self.m_bg += o.m_bg;
    }
}

/// How pixels with an invalid disparity are lifted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InvalidDisparity {
    /// `b_d = 0`, the far end of the range.
    Zero,
    /// Borrow the nearest valid disparity on the same row.
    #[default]
    NearestValid,
}

impl std::str::FromStr for InvalidDisparity {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "zero" => Ok(InvalidDisparity::Zero),
            "nearest_valid" => Ok(InvalidDisparity::NearestValid),
            _ => Err(()),
        }
    }
}

impl fmt::Display for InvalidDisparity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InvalidDisparity::Zero => "zero",
            InvalidDisparity::NearestValid => "nearest_valid",
        })
    }
}

/// Copy of `dm` where each invalid pixel takes the closest valid disparity
/// on its row (left wins ties). Rows without any valid pixel stay invalid.
pub fn fill_invalid_nearest(dm: &DisparityMap) -> DisparityMap {
    let mut out = dm.clone();
    for y in 0..dm.height {
        let row = y * dm.width..(y + 1) * dm.width;
        let valid = &dm.valid[row.clone()];
        let d = &dm.d[row.clone()];
        let mut left: Vec<Option<usize>> = vec![None; dm.width];
        let mut last = None;
        for x in 0..dm.width {
            if valid[x] {
                last = Some(x);
            }
            left[x] = last;
        }
        let mut right = None;
        for x in (0..dm.width).rev() {
            if valid[x] {
                right = Some(x);
                continue;
            }
            let pick = match (left[x], right) {
                (Some(l), Some(r)) => Some(if x - l <= r - x { l } else { r }),
                (l, r) => l.or(r),
            };
            if let Some(src) = pick {
                out.d[row.start + x] = d[src];
                out.valid[row.start + x] = true;
            }
        }
    }
    out
}

/// One frame entering the grid. Frames carrying a `mask` are propagation
/// frames: they add `M_FG`/`M_BG` to vertices already occupied by the
/// evidence frames and nothing else.
#[derive(Debug, Clone, Copy)]
pub struct GridSource<'a> {
    pub frame: &'a Frame,
    pub disparity: &'a DisparityMap,
    /// Time value lifted on the t axis.
    pub t: f64,
    pub mask: Option<&'a BinaryMask>,
}

impl<'a> GridSource<'a> {
    pub fn evidence(frame: &'a Frame, disparity: &'a DisparityMap) -> Self {
        GridSource {
            frame,
            disparity,
            t: frame.t as f64,
            mask: None,
        }
    }

    #[inline]
    fn sample(&self, x: usize, y: usize) -> PixelSample {
        PixelSample {
            yuv: self.frame.yuv(x, y),
            x: x as f64,
            y: y as f64,
            d: self.disparity.get(x, y),
            t: self.t,
        }
    }
}

type Accumulator = FxHashMap<u64, GridVertex>;

#[derive(Debug, Clone)]
pub struct SparseGrid {
    pub params: GridParams,
    /// Occupied vertices sorted by key.
    pub vertices: Vec<(VertexKey, GridVertex)>,
    index: FxHashMap<u64, u32>,
    /// Evidence pixels splatted.
    pub pixel_count: usize,
    /// Whether a propagation frame contributed mask weights.
    pub has_mask: bool,
}

impl SparseGrid {
    /// Assemble a grid from explicit vertices. Vertices with `S = 0` are
    /// dropped and the rest sorted by key.
    pub fn from_vertices(params: GridParams, mut vertices: Vec<(VertexKey, GridVertex)>) -> Self {
        vertices.retain(|(_, v)| v.s > 0.0);
        vertices.sort_unstable_by_key(|(k, _)| *k);
        vertices.dedup_by_key(|(k, _)| *k);
        let has_mask = vertices.iter().any(|(_, v)| v.m_fg > 0.0 || v.m_bg > 0.0);
        let index = vertices
            .iter()
            .enumerate()
            .map(|(i, (k, _))| (k.0, i as u32))
            .collect();
        SparseGrid {
            params,
            vertices,
            index,
            pixel_count: 0,
            has_mask,
        }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn index_of(&self, key: VertexKey) -> Option<usize> {
        self.index.get(&key.0).map(|&i| i as usize)
    }

    pub fn get(&self, key: VertexKey) -> Option<&GridVertex> {
        self.index_of(key).map(|i| &self.vertices[i].1)
    }

    /// One line per vertex: `k_Y k_U k_V k_x k_y k_d k_t S A_FG A_BG [M_FG M_BG]`.
    pub fn write_dump(&self, mut out: impl Write) -> io::Result<()> {
        for (k, v) in &self.vertices {
            write!(out, "{k} {} {} {}", v.s, v.a_fg, v.a_bg)?;
            if self.has_mask {
                write!(out, " {} {}", v.m_fg, v.m_bg)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn check_source(src: &GridSource, roi: &RoiRect) -> Result<()> {
    let dims = (src.frame.width, src.frame.height);
    let found = (src.disparity.width, src.disparity.height);
    if found != dims {
        return Err(Error::DimensionMismatch {
            expected: dims,
            found,
            context: format!(" (disparity of frame {})", src.frame.t),
        });
    }
    if let Some(m) = src.mask {
        if m.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                found: m.dims(),
                context: format!(" (mask of frame {})", src.frame.t),
            });
        }
    }
    if !roi.fits(dims.0, dims.1) {
        return Err(Error::DimensionMismatch {
            expected: dims,
            found: (roi.x1 + 1, roi.y1 + 1),
            context: " (roi outside image)".into(),
        });
    }
    Ok(())
}

fn splat_frame(src: &GridSource, roi: &RoiRect, params: &GridParams) -> Accumulator {
    let mut acc = Accumulator::default();
    let l_d = params.dims[AXIS_D] as f64;
    for y in roi.y0..=roi.y1 {
        for x in roi.x0..=roi.x1 {
            let b = lift(&src.sample(x, y), params);
            let d_hat = b.0[AXIS_D] / l_d;
            for_each_splat(&b, &params.dims, |k, w| {
                acc.entry(k.0).or_default().add_evidence(w, d_hat);
            });
        }
    }
    acc
}

/// Splat the ROI pixels of all sources into a sparse grid.
///
/// Evidence frames are reduced into per-frame partial grids (in parallel)
/// and merged in source order, so the result does not depend on the
/// worker count.
pub fn build_grid(
    sources: &[GridSource],
    roi: &RoiRect,
    params: &GridParams,
) -> Result<SparseGrid> {
    for src in sources {
        check_source(src, roi)?;
    }
    if roi.area() == 0 {
        return Err(Error::EmptyRoi);
    }
    let evidence: Vec<&GridSource> = sources.iter().filter(|s| s.mask.is_none()).collect();
    if evidence.is_empty() {
        return Err(Error::EmptyRoi);
    }

    let partials: Vec<Accumulator> = evidence
        .par_iter()
        .map(|src| splat_frame(src, roi, params))
        .collect();
    let mut merged = Accumulator::default();
    for part in &partials {
        for (k, v) in part {
            merged.entry(*k).or_default().merge(v);
        }
    }
    drop(partials);

    let mut has_mask = false;
    for src in sources {
        let Some(mask) = src.mask else { continue };
        has_mask = true;
        for y in roi.y0..=roi.y1 {
            for x in roi.x0..=roi.x1 {
                let fg = mask.get(x, y);
                let b = lift(&src.sample(x, y), params);
                for_each_splat(&b, &params.dims, |k, w| {
                    if let Some(v) = merged.get_mut(&k.0) {
                        if fg {
                            v.m_fg += w;
                        } else {
                            v.m_bg += w;
                        }
                    }
                });
            }
        }
    }

    let vertices = merged.into_iter().map(|(k, v)| (VertexKey(k), v)).collect();
    let mut grid = SparseGrid::from_vertices(params.clone(), vertices);
    grid.pixel_count = evidence.len() * roi.area();
    grid.has_mask = has_mask;
    Ok(grid)
}

/// Read vertex labels back at pixel resolution.
///
/// Each ROI pixel gets the splat-weighted mean of the labels of its
/// vertices and is foreground when that mean reaches `tau`. Pixels outside
/// the ROI, or with no occupied vertex in reach, are background.
pub fn slice(
    grid: &SparseGrid,
    labels: &[u8],
    sources: &[GridSource],
    roi: &RoiRect,
    tau: f64,
) -> Vec<BinaryMask> {
    assert_eq!(labels.len(), grid.len(), "labeling must cover every vertex");
    sources
        .par_iter()
        .map(|src| {
            let mut mask = BinaryMask::zeros(src.frame.width, src.frame.height);
            for y in roi.y0..=roi.y1 {
                for x in roi.x0..=roi.x1 {
                    let b = lift(&src.sample(x, y), &grid.params);
                    let (mut num, mut den) = (0.0, 0.0);
                    for_each_splat(&b, &grid.params.dims, |k, w| {
                        if let Some(i) = grid.index_of(k) {
                            den += w;
                            num += w * labels[i] as f64;
                        }
                    });
                    if den > 0.0 && num / den >= tau {
                        mask.set(x, y, true);
                    }
                }
            }
            mask
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const UNIT: [u32; NDIM] = [10; NDIM];

    fn coord(v: [f64; NDIM]) -> BilateralCoord {
        BilateralCoord(v)
    }

    fn unit_params() -> GridParams {
        GridParams::new(UNIT, [AxisRange::new(0.0, 10.0); NDIM]).unwrap()
    }

    #[test]
    fn lift_endpoints() {
        let dims = [7, 9, 9, 13, 13, 2, 2];
        let ranges = [
            AxisRange::new(0.0, 255.0),
            AxisRange::new(0.0, 255.0),
            AxisRange::new(0.0, 255.0),
            AxisRange::new(0.0, 599.0),
            AxisRange::new(0.0, 399.0),
            AxisRange::new(3.0, 42.0),
            AxisRange::new(0.0, 9.0),
        ];
        let p = GridParams::new(dims, ranges).unwrap();
        let lo = PixelSample {
            yuv: [0, 0, 0],
            x: 0.0,
            y: 0.0,
            d: Some(3.0),
            t: 0.0,
        };
        assert_eq!(lift(&lo, &p).0, [0.0; NDIM]);
        let hi = PixelSample {
            yuv: [255, 255, 255],
            x: 599.0,
            y: 399.0,
            d: Some(42.0),
            t: 9.0,
        };
        let b = lift(&hi, &p).0;
        for i in 0..NDIM {
            assert!((b[i] - dims[i] as f64).abs() < 1e-12, "axis {i}: {}", b[i]);
        }
        let mid = PixelSample { x: 300.0, ..lo };
        assert!((lift(&mid, &p).0[3] - 13.0 * 300.0 / 599.0).abs() < 1e-12);
        assert!((lift(&mid, &p).0[3] - 6.5109).abs() < 1e-4);
        let invalid = PixelSample { d: None, ..hi };
        assert_eq!(lift(&invalid, &p).0[AXIS_D], 0.0);
        let out_of_range = PixelSample { d: Some(100.0), ..lo };
        assert!((lift(&out_of_range, &p).0[AXIS_D] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_range_maps_to_zero() {
        let mut ranges = [AxisRange::new(0.0, 10.0); NDIM];
        ranges[AXIS_T] = AxisRange::new(4.0, 4.0);
        let p = GridParams::new(UNIT, ranges).unwrap();
        let s = PixelSample {
            yuv: [1, 1, 1],
            x: 1.0,
            y: 1.0,
            d: Some(1.0),
            t: 4.0,
        };
        assert_eq!(lift(&s, &p).0[AXIS_T], 0.0);
    }

    #[test]
    fn rejects_bad_params() {
        let mut dims = UNIT;
        dims[2] = 0;
        assert!(GridParams::new(dims, [AxisRange::new(0.0, 1.0); NDIM]).is_err());
        dims[2] = 256;
        assert!(GridParams::new(dims, [AxisRange::new(0.0, 1.0); NDIM]).is_err());
        let mut ranges = [AxisRange::new(0.0, 1.0); NDIM];
        ranges[0] = AxisRange::new(2.0, 1.0);
        assert!(GridParams::new(UNIT, ranges).is_err());
    }

    #[test]
    fn nearest_rounding() {
        let k = nearest_vertex(&coord([3.0, 2.5, 6.51, 0.49, 10.0, 0.0, 1.5]), &UNIT);
        assert_eq!(k.coords(), [3, 3, 7, 0, 10, 0, 2]);
    }

    #[test]
    fn splat_on_vertex() {
        let w = splat_weights(&coord([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]), &UNIT);
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].0.coords(), [1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(w[0].1, 1.0);
    }

    #[test]
    fn splat_two_axis_example() {
        let w = splat_weights(&coord([0.3, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0]), &UNIT);
        let find = |c: [u32; NDIM]| {
            w.iter()
                .find(|(k, _)| k.coords() == c)
                .map(|(_, w)| *w)
                .unwrap()
        };
        assert_eq!(w.len(), 3);
        assert!((find([0; NDIM]) - 0.56).abs() < 1e-12);
        assert!((find([1, 0, 0, 0, 0, 0, 0]) - 0.24).abs() < 1e-12);
        assert!((find([0, 1, 0, 0, 0, 0, 0]) - 0.14).abs() < 1e-12);
        let total: f64 = w.iter().map(|(_, w)| w).sum();
        assert!((total - 0.94).abs() < 1e-12);
    }

    #[test]
    fn splat_half_tie() {
        let w = splat_weights(&coord([2.5, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]), &UNIT);
        let mut got: Vec<_> = w.iter().map(|(k, w)| (k.coord(0), *w)).collect();
        got.sort_by_key(|x| x.0);
        assert_eq!(got, vec![(2, 0.5), (3, 0.5)]);
    }

    proptest! {
        #[test]
        fn splat_weight_bounds(b in prop::array::uniform7(0.0f64..=10.0)) {
            let b = coord(b);
            let w = splat_weights(&b, &UNIT);
            let n = nearest_vertex(&b, &UNIT);
            let center = w.iter().find(|(k, _)| *k == n).map(|x| x.1).unwrap();
            let mut total = 0.0;
            for (k, wk) in &w {
                prop_assert!(*wk > 0.0 && *wk <= 1.0);
                prop_assert!(center >= *wk);
                prop_assert!(k.l1_distance(&n) <= 1);
                total += wk;
            }
            prop_assert!(total > 0.0 && total <= 1.0 + 1e-12);
            prop_assert!(w.len() <= 2 * NDIM + 1);
        }
    }

    fn frame_from(pixels: Vec<[u8; 3]>, width: usize, t: usize) -> Frame {
        Frame {
            width,
            height: pixels.len() / width,
            t,
            pixels,
        }
    }

    #[test]
    fn single_pixel_on_vertex() {
        let frame = frame_from(vec![[0, 0, 0]], 1, 0);
        let dm = DisparityMap::uniform(1, 1, 10.0);
        let p = unit_params();
        let grid = build_grid(
            &[GridSource::evidence(&frame, &dm)],
            &RoiRect::full(1, 1),
            &p,
        )
        .unwrap();
        assert_eq!(grid.len(), 1);
        let v = grid.vertices[0].1;
        assert_eq!((v.s, v.a_fg, v.a_bg), (1.0, 1.0, 0.0));
    }

    #[test]
    fn accumulation_is_linear() {
        let px = [37u8, 140, 90];
        let one = frame_from(vec![px], 1, 0);
        let d1 = DisparityMap::uniform(1, 1, 3.3);
        let mut ranges = [AxisRange::new(0.0, 255.0); NDIM];
        ranges[3] = AxisRange::new(0.0, 0.0);
        ranges[AXIS_D] = AxisRange::new(0.0, 10.0);
        ranges[AXIS_T] = AxisRange::new(0.0, 0.0);
        let p = GridParams::new([7, 9, 9, 13, 13, 2, 2], ranges).unwrap();
        let g1 = build_grid(&[GridSource::evidence(&one, &d1)], &RoiRect::full(1, 1), &p).unwrap();
        // the identical pixel again, as a second frame at the same t
        let g2 = build_grid(
            &[
                GridSource::evidence(&one, &d1),
                GridSource::evidence(&one, &d1),
            ],
            &RoiRect::full(1, 1),
            &p,
        )
        .unwrap();
        assert_eq!(g1.len(), g2.len());
        for ((k1, v1), (k2, v2)) in g1.vertices.iter().zip(&g2.vertices) {
            assert_eq!(k1, k2);
            assert_eq!(v2.s, 2.0 * v1.s);
            assert_eq!(v2.a_fg, 2.0 * v1.a_fg);
            assert_eq!(v2.a_bg, 2.0 * v1.a_bg);
        }
    }

    #[test]
    fn roi_restricts_and_empty_checks() {
        let frame = frame_from(vec![[10, 10, 10]; 6], 3, 0);
        let dm = DisparityMap::uniform(3, 2, 1.0);
        let p = unit_params();
        let roi = RoiRect {
            x0: 1,
            y0: 0,
            x1: 1,
            y1: 1,
        };
        let grid = build_grid(&[GridSource::evidence(&frame, &dm)], &roi, &p).unwrap();
        assert_eq!(grid.pixel_count, 2);
        let total: f64 = grid.vertices.iter().map(|(_, v)| v.s).sum();
        assert!(total <= 2.0 + 1e-12);
        let bad = RoiRect {
            x0: 0,
            y0: 0,
            x1: 3,
            y1: 0,
        };
        assert!(build_grid(&[GridSource::evidence(&frame, &dm)], &bad, &p).is_err());
        assert!(matches!(build_grid(&[], &roi, &p), Err(Error::EmptyRoi)));
    }

    fn random_frame(seed: u64, w: usize, h: usize) -> (Frame, DisparityMap) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pixels = (0..w * h).map(|_| rng.gen::<[u8; 3]>()).collect();
        let d = (0..w * h).map(|_| rng.gen_range(0.0..50.0)).collect();
        let valid = (0..w * h).map(|_| rng.gen_bool(0.9)).collect();
        (
            frame_from(pixels, w, 0),
            DisparityMap::new(w, h, d, valid).unwrap(),
        )
    }

    fn window_params(w: usize, h: usize) -> GridParams {
        GridParams::for_window(
            &GridSize::default(),
            &RoiRect::full(w, h),
            (0.0, 50.0),
            (0.0, 0.0),
        )
        .unwrap()
    }

    #[test]
    fn affinities_conserve_weight() {
        let (f, d) = random_frame(3, 40, 30);
        let p = window_params(40, 30);
        let g = build_grid(&[GridSource::evidence(&f, &d)], &RoiRect::full(40, 30), &p).unwrap();
        assert!(g.len() <= 15 * 1200);
        for (_, v) in &g.vertices {
            assert!(v.s > 0.0 && v.a_fg >= 0.0 && v.a_bg >= 0.0);
            assert!((v.a_fg + v.a_bg - v.s).abs() <= 1e-6 * v.s);
        }
        let total: f64 = g.vertices.iter().map(|(_, v)| v.s).sum();
        assert!(total <= g.pixel_count as f64 + 1e-9);
    }

    #[test]
    fn build_is_deterministic_across_pools() {
        let frames: Vec<_> = (0..4).map(|s| random_frame(s, 30, 20)).collect();
        let p = window_params(30, 20);
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let src: Vec<_> = frames
                    .iter()
                    .map(|(f, d)| GridSource::evidence(f, d))
                    .collect();
                build_grid(&src, &RoiRect::full(30, 20), &p).unwrap()
            })
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.vertices, b.vertices);
    }

    #[test]
    fn mask_weights_only_on_occupied_vertices() {
        let (f, d) = random_frame(9, 20, 10);
        let (f2, d2) = random_frame(10, 20, 10);
        let p = window_params(20, 10);
        let roi = RoiRect::full(20, 10);
        let base = build_grid(&[GridSource::evidence(&f, &d)], &roi, &p).unwrap();
        let mask = BinaryMask::ones(20, 10);
        let with = build_grid(
            &[
                GridSource::evidence(&f, &d),
                GridSource {
                    frame: &f2,
                    disparity: &d2,
                    t: 0.0,
                    mask: Some(&mask),
                },
            ],
            &roi,
            &p,
        )
        .unwrap();
        assert!(with.has_mask);
        assert_eq!(base.len(), with.len());
        for ((k1, v1), (k2, v2)) in base.vertices.iter().zip(&with.vertices) {
            assert_eq!(k1, k2);
            assert_eq!((v1.s, v1.a_fg, v1.a_bg), (v2.s, v2.a_fg, v2.a_bg));
            assert_eq!(v2.m_bg, 0.0);
        }
        // the same frame as its own propagation source hits every vertex
        let same = build_grid(
            &[
                GridSource::evidence(&f, &d),
                GridSource {
                    mask: Some(&mask),
                    ..GridSource::evidence(&f, &d)
                },
            ],
            &roi,
            &p,
        )
        .unwrap();
        for (_, v) in &same.vertices {
            assert!((v.m_fg - v.s).abs() <= 1e-9 * v.s);
        }
    }

    #[test]
    fn slice_constant_labels() {
        let (f, d) = random_frame(5, 25, 15);
        let p = window_params(25, 15);
        let roi = RoiRect {
            x0: 2,
            y0: 3,
            x1: 20,
            y1: 12,
        };
        let src = [GridSource::evidence(&f, &d)];
        let g = build_grid(&src, &roi, &p).unwrap();
        let ones = slice(&g, &vec![1; g.len()], &src, &roi, 0.5);
        assert_eq!(ones[0].count(), roi.area());
        assert!(!ones[0].get(0, 0));
        let zeros = slice(&g, &vec![0; g.len()], &src, &roi, 0.5);
        assert_eq!(zeros[0].count(), 0);
    }

    #[test]
    fn slice_weighted_average() {
        // a pixel at (0.3, 0.2) in the Y/U plane: 0.56 on the labeled
        // vertex, 0.38 on the rest, prob = 0.56 / 0.94
        let mut ranges = [AxisRange::new(0.0, 0.0); NDIM];
        ranges[0] = AxisRange::new(0.0, 100.0);
        ranges[1] = AxisRange::new(0.0, 100.0);
        let p = GridParams::new([10, 10, 1, 1, 1, 1, 1], ranges).unwrap();
        let frame = frame_from(vec![[3, 2, 0]], 1, 0);
        let dm = DisparityMap::uniform(1, 1, 0.0);
        let src = [GridSource::evidence(&frame, &dm)];
        let roi = RoiRect::full(1, 1);
        let g = build_grid(&src, &roi, &p).unwrap();
        assert_eq!(g.len(), 3);
        let origin = g.index_of(VertexKey::from_coords([0; NDIM])).unwrap();
        let mut labels = vec![0; 3];
        labels[origin] = 1;
        assert_eq!(slice(&g, &labels, &src, &roi, 0.5)[0].count(), 1);
        assert_eq!(slice(&g, &labels, &src, &roi, 0.6)[0].count(), 0);
    }

    #[test]
    fn nearest_valid_fill() {
        let dm = DisparityMap::new(
            5,
            1,
            vec![1.0, 0.0, 0.0, 0.0, 5.0],
            vec![true, false, false, false, true],
        )
        .unwrap();
        let f = fill_invalid_nearest(&dm);
        assert_eq!(f.d, vec![1.0, 1.0, 1.0, 5.0, 5.0]);
        assert!(f.valid.iter().all(|&v| v));
    }

    #[test]
    fn dump_format() {
        let frame = frame_from(vec![[0, 0, 0]], 1, 0);
        let dm = DisparityMap::uniform(1, 1, 10.0);
        let g = build_grid(
            &[GridSource::evidence(&frame, &dm)],
            &RoiRect::full(1, 1),
            &unit_params(),
        )
        .unwrap();
        let mut out = Vec::new();
        g.write_dump(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "0 0 0 0 0 10 0 1 1 0\n");
    }
}
