//! Streaming segmentation over fixed-length subsequences.
//!
//! The first window is segmented from the disparity term alone. Every later
//! window additionally sees the last frame of the previous window together
//! with its solved mask: that frame is splatted at the window's first time
//! step and contributes mask weights to the vertices the window occupies.
//! Only one frame and one mask are carried between windows.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph_cut::{build_graph, energy, min_cut, EnergyMode, GraphParams};
use crate::grid::{build_grid, fill_invalid_nearest, slice, GridParams, GridSize, GridSource, InvalidDisparity};
use crate::media_io::{BinaryMask, DisparityMap, Frame, StereoSequence};
use crate::prior::{apply_interval, compute_prior, estimate_interval, DisparityInterval, PriorParams, RoiRect};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubsequenceWindow {
    /// 1-based window number.
    pub index: usize,
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    /// Last frame of the previous window.
    pub overlap_frame: Option<usize>,
}

impl SubsequenceWindow {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

pub fn split_subsequences(n_frames: usize, l: usize) -> Vec<SubsequenceWindow> {
    assert!(l >= 1, "subsequence length must be positive");
    (0..n_frames)
        .step_by(l)
        .enumerate()
        .map(|(i, start)| SubsequenceWindow {
            index: i + 1,
            start,
            end: (start + l).min(n_frames),
            overlap_frame: start.checked_sub(1),
        })
        .collect()
}

/// Where the disparity interval and ROI come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriorMode {
    /// Recomputed on the first frame of each window.
    #[default]
    Window,
    /// Recomputed on every frame; the window ROI is the union.
    Frame,
    /// Interval fixed by the first window; only the ROI follows the scene.
    Frozen,
}

impl FromStr for PriorMode {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "window" => Ok(PriorMode::Window),
            "frame" => Ok(PriorMode::Frame),
            "frozen" => Ok(PriorMode::Frozen),
            _ => Err(()),
        }
    }
}

impl fmt::Display for PriorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriorMode::Window => "window",
            PriorMode::Frame => "frame",
            PriorMode::Frozen => "frozen",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationParams {
    /// Subsequence length.
    pub l: usize,
    pub grid: GridSize,
    pub graph: GraphParams,
    /// Slice threshold.
    pub tau: f64,
    pub prior: PriorParams,
    pub prior_mode: PriorMode,
    pub invalid_d: InvalidDisparity,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        SegmentationParams {
            l: 10,
            grid: GridSize::default(),
            graph: GraphParams::default(),
            tau: 0.5,
            prior: PriorParams::default(),
            prior_mode: PriorMode::Window,
            invalid_d: InvalidDisparity::NearestValid,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StreamState {
    pub prev_frame: Frame,
    pub prev_disparity: DisparityMap,
    pub prev_mask: BinaryMask,
    /// Interval used by the previous window, if it found one.
    pub interval: Option<DisparityInterval>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowReport {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub vertices: usize,
    pub energy: f64,
    pub fg_pixels: usize,
    pub roi: Option<RoiRect>,
    pub warning: Option<String>,
}

impl WindowReport {
    /// `window=<i> frames=<a>..<b> vertices=<n> energy=<E> fg_pixels=<k>`,
    /// with `b` exclusive.
    pub fn progress_line(&self) -> String {
        format!(
            "window={} frames={}..{} vertices={} energy={} fg_pixels={}",
            self.index, self.start, self.end, self.vertices, self.energy, self.fg_pixels
        )
    }
}

fn prepared(dm: &DisparityMap, mode: InvalidDisparity) -> std::borrow::Cow<'_, DisparityMap> {
    match mode {
        InvalidDisparity::Zero => std::borrow::Cow::Borrowed(dm),
        InvalidDisparity::NearestValid => std::borrow::Cow::Owned(fill_invalid_nearest(dm)),
    }
}

fn is_no_foreground(e: &Error) -> bool {
    matches!(
        e,
        Error::NoForegroundPeak | Error::NoValidDisparity | Error::EmptyMask
    )
}

fn window_prior(
    disparities: &[&DisparityMap],
    state: Option<&StreamState>,
    params: &SegmentationParams,
) -> Result<(DisparityInterval, RoiRect)> {
    let first = disparities[0];
    match params.prior_mode {
        PriorMode::Window => {
            let p = compute_prior(first, &params.prior)?;
            Ok((p.interval, p.roi))
        }
        PriorMode::Frozen => {
            let interval = match state.and_then(|s| s.interval) {
                Some(iv) => iv,
                None => estimate_interval(first, &params.prior)?,
            };
            let p = apply_interval(first, interval, &params.prior)?;
            Ok((interval, p.roi))
        }
        PriorMode::Frame => {
            let mut found: Option<(DisparityInterval, RoiRect)> = None;
            let mut last_err = None;
            for dm in disparities {
                match compute_prior(dm, &params.prior) {
                    Ok(p) => {
                        found = Some(match found {
                            None => (p.interval, p.roi),
                            Some((iv, roi)) => (iv, roi.union(&p.roi)),
                        });
                    }
                    Err(e) if is_no_foreground(&e) => last_err = Some(e),
                    Err(e) => return Err(e),
                }
            }
            found.ok_or_else(|| last_err.unwrap_or(Error::NoForegroundPeak))
        }
    }
}

fn disparity_range(disparities: &[&DisparityMap]) -> (f64, f64) {
    disparities
        .iter()
        .filter_map(|dm| dm.valid_range())
        .reduce(|(lo, hi), (a, b)| (lo.min(a), hi.max(b)))
        .unwrap_or((0.0, 0.0))
}

/// Segment one window. `state` must be present exactly for windows after
/// the first.
pub fn segment_window(
    window: &SubsequenceWindow,
    sequence: &StereoSequence,
    state: Option<&StreamState>,
    params: &SegmentationParams,
) -> Result<(Vec<BinaryMask>, StreamState, WindowReport)> {
    if window.is_empty() || window.end > sequence.len() {
        return Err(Error::CountMismatch {
            left: window.end,
            right: sequence.len(),
            context: format!(" (window {} exceeds the sequence)", window.index),
        });
    }
    let (w, h) = sequence.dims();
    let frames = &sequence.frames[window.start..window.end];
    let prepared_disp: Vec<_> = sequence.disparities[window.start..window.end]
        .iter()
        .map(|d| prepared(d, params.invalid_d))
        .collect();
    let disparities: Vec<&DisparityMap> = prepared_disp.iter().map(|d| d.as_ref()).collect();

    let last = window.end - 1;
    let mut report = WindowReport {
        index: window.index,
        start: window.start,
        end: window.end,
        vertices: 0,
        energy: 0.0,
        fg_pixels: 0,
        roi: None,
        warning: None,
    };
    let (interval, roi) = match window_prior(&disparities, state, params) {
        Ok(v) => v,
        Err(e) if is_no_foreground(&e) => {
            report.warning = Some(format!(
                "window {}: {e}; emitting background masks",
                window.index
            ));
            let masks = vec![BinaryMask::zeros(w, h); window.len()];
            let next = StreamState {
                prev_frame: sequence.frames[last].clone(),
                prev_disparity: sequence.disparities[last].clone(),
                prev_mask: BinaryMask::zeros(w, h),
                interval: state.and_then(|s| s.interval),
            };
            return Ok((masks, next, report));
        }
        Err(e) => return Err(e),
    };
    report.roi = Some(roi);

    let d_range = disparity_range(&disparities);
    let t_range = (window.start as f64, last as f64);
    let grid_params = GridParams::for_window(&params.grid, &roi, d_range, t_range)?;

    let evidence: Vec<GridSource> = frames
        .iter()
        .zip(&disparities)
        .map(|(f, d)| GridSource::evidence(f, d))
        .collect();
    let prev_disp = state.map(|s| prepared(&s.prev_disparity, params.invalid_d));
    let mut sources = evidence.clone();
    if let (Some(s), Some(pd)) = (state, prev_disp.as_ref()) {
        sources.push(GridSource {
            frame: &s.prev_frame,
            disparity: pd.as_ref(),
            t: window.start as f64,
            mask: Some(&s.prev_mask),
        });
    }

    let grid = build_grid(&sources, &roi, &grid_params)?;
    let mode = if state.is_some() {
        EnergyMode::Propagated
    } else {
        EnergyMode::FirstWindow
    };
    let graph = build_graph(&grid, &params.graph, mode)?;
    let labels = min_cut(&graph);
    let masks = slice(&grid, &labels, &evidence, &roi, params.tau);

    report.vertices = grid.len();
    report.energy = energy(&graph, &labels).total;
    report.fg_pixels = masks.iter().map(|m| m.count()).sum();

    let next = StreamState {
        prev_frame: sequence.frames[last].clone(),
        prev_disparity: sequence.disparities[last].clone(),
        prev_mask: masks.last().expect("window is non-empty").clone(),
        interval: Some(interval),
    };
    Ok((masks, next, report))
}

/// Segment the whole sequence window by window, calling `on_window` after
/// each one. Returns one mask per frame, in frame order.
pub fn segment_stream(
    sequence: &StereoSequence,
    params: &SegmentationParams,
    mut on_window: impl FnMut(&WindowReport),
) -> Result<Vec<BinaryMask>> {
    if sequence.is_empty() {
        return Err(Error::EmptyInput);
    }
    validate_params(params)?;
    let mut masks = Vec::with_capacity(sequence.len());
    let mut state: Option<StreamState> = None;
    for window in split_subsequences(sequence.len(), params.l) {
        let (out, next, report) = segment_window(&window, sequence, state.as_ref(), params)?;
        on_window(&report);
        masks.extend(out);
        state = Some(next);
    }
    Ok(masks)
}

pub fn validate_params(params: &SegmentationParams) -> Result<()> {
    if params.l == 0 {
        return Err(Error::bad_value("l", "0", "integer >= 1"));
    }
    if !(params.tau > 0.0 && params.tau < 1.0) {
        return Err(Error::bad_value("tau", &params.tau.to_string(), "value in (0, 1)"));
    }
    params.graph.validate()
}
