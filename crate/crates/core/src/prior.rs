//! Automatic foreground prior from the disparity histogram.
//!
//! The nearest object dominates a peak at large disparity. The peak bin is
//! grown into an interval holding a fixed share of the valid pixels; pixels
//! whose disparity falls inside the interval form the prior mask, and the
//! bounding rectangle of that mask becomes the region of interest.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::media_io::{BinaryMask, DisparityMap};

/// Bin index of a disparity: round to nearest, ties half-up.
#[inline]
pub fn disparity_bin(d: f64) -> usize {
    (d + 0.5).floor().max(0.0) as usize
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisparityHistogram {
    /// Count per integer disparity, indices `0..=d_max_bin`.
    pub bins: Vec<u64>,
    pub total: u64,
}

impl DisparityHistogram {
    pub fn from_counts(counts: &[(usize, u64)]) -> Self {
        let len = counts.iter().map(|&(d, _)| d + 1).max().unwrap_or(0);
        let mut bins = vec![0; len];
        for &(d, c) in counts {
            bins[d] += c;
        }
        let mut h = DisparityHistogram {
            total: bins.iter().sum(),
            bins,
        };
        h.trim();
        h
    }

    /// Frequency of bin `d`; zero outside the populated range.
    #[inline]
    pub fn count(&self, d: i64) -> u64 {
        if d < 0 {
            0
        } else {
            self.bins.get(d as usize).copied().unwrap_or(0)
        }
    }

    pub fn d_max_bin(&self) -> Option<usize> {
        self.bins.iter().rposition(|&c| c > 0)
    }

    pub fn d_min_bin(&self) -> Option<usize> {
        self.bins.iter().position(|&c| c > 0)
    }

    fn trim(&mut self) {
        let len = self.d_max_bin().map_or(0, |d| d + 1);
        self.bins.truncate(len);
    }
}

/// Invalid pixels are excluded.
pub fn disparity_histogram(dm: &DisparityMap) -> Result<DisparityHistogram> {
    let mut bins: Vec<u64> = Vec::new();
    let mut total = 0u64;
    for (&d, _) in dm.d.iter().zip(&dm.valid).filter(|(_, ok)| **ok) {
        let b = disparity_bin(d);
        if b >= bins.len() {
            bins.resize(b + 1, 0);
        }
        bins[b] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(Error::NoValidDisparity);
    }
    Ok(DisparityHistogram { bins, total })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PeakRule {
    /// Largest qualifying disparity (nearest object).
    #[default]
    Nearest,
    /// Highest qualifying frequency; ties go to the larger disparity.
    MostFrequent,
}

impl FromStr for PeakRule {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "nearest" => Ok(PeakRule::Nearest),
            "most_frequent" => Ok(PeakRule::MostFrequent),
            _ => Err(()),
        }
    }
}

impl fmt::Display for PeakRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PeakRule::Nearest => "nearest",
            PeakRule::MostFrequent => "most_frequent",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PriorParams {
    pub nth1_divisor: u64,
    pub nth2_divisor: u64,
    pub peak_rule: PeakRule,
    pub roi_margin: usize,
}

impl Default for PriorParams {
    fn default() -> Self {
        PriorParams {
            nth1_divisor: 100,
            nth2_divisor: 10,
            peak_rule: PeakRule::Nearest,
            roi_margin: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PriorThresholds {
    /// Minimum frequency a peak must exceed.
    pub n_th1: u64,
    /// Cumulative count the grown interval must exceed.
    pub n_th2: u64,
}

impl PriorThresholds {
    pub fn new(total: u64, params: &PriorParams) -> Self {
        PriorThresholds {
            n_th1: total / params.nth1_divisor,
            n_th2: total / params.nth2_divisor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DisparityInterval {
    pub d_lo: usize,
    pub d_hi: usize,
    pub d_th: usize,
}

impl DisparityInterval {
    #[inline]
    pub fn contains(&self, bin: usize) -> bool {
        (self.d_lo..=self.d_hi).contains(&bin)
    }
}

fn is_peak(h: &DisparityHistogram, d: usize, n_th1: u64) -> bool {
    let f = h.count(d as i64);
    f > h.count(d as i64 - 1) && f > h.count(d as i64 + 1) && f > n_th1
}

/// All bins that are strict local maxima above `n_th1`, ascending.
pub fn qualifying_peaks(h: &DisparityHistogram, n_th1: u64) -> Vec<usize> {
    (0..h.bins.len()).filter(|&d| is_peak(h, d, n_th1)).collect()
}

pub fn find_foreground_peak(
    h: &DisparityHistogram,
    n_th1: u64,
    rule: PeakRule,
) -> Result<usize> {
    let peaks = qualifying_peaks(h, n_th1);
    let chosen = match rule {
        PeakRule::Nearest => peaks.last().copied(),
        // max_by_key keeps the last maximum, i.e. the larger disparity on ties
        PeakRule::MostFrequent => peaks.iter().copied().max_by_key(|&d| h.bins[d]),
    };
    chosen.ok_or(Error::NoForegroundPeak)
}

/// Grow `[d_th, d_th]` one bin at a time until its cumulative count exceeds
/// `n_th2`. Each step takes the boundary neighbor with the larger count
/// (ties go up) and never steps past the populated range.
pub fn grow_interval(h: &DisparityHistogram, d_th: usize, n_th2: u64) -> DisparityInterval {
    let (Some(min_pop), Some(max_pop)) = (h.d_min_bin(), h.d_max_bin()) else {
        return DisparityInterval {
            d_lo: d_th,
            d_hi: d_th,
            d_th,
        };
    };
    let (mut lo, mut hi) = (d_th, d_th);
    let mut sum = h.count(d_th as i64);
    while sum <= n_th2 {
        let down = (lo > min_pop).then(|| h.count(lo as i64 - 1));
        let up = (hi < max_pop).then(|| h.count(hi as i64 + 1));
        match (down, up) {
            (None, None) => break,
            (Some(c), None) => {
                lo -= 1;
                sum += c;
            }
            (None, Some(c)) => {
                hi += 1;
                sum += c;
            }
            (Some(cd), Some(cu)) => {
                if cu >= cd {
                    hi += 1;
                    sum += cu;
                } else {
                    lo -= 1;
                    sum += cd;
                }
            }
        }
    }
    DisparityInterval {
        d_lo: lo,
        d_hi: hi,
        d_th,
    }
}

/// Valid pixels whose disparity bin lies in the interval.
pub fn build_prior_mask(dm: &DisparityMap, interval: &DisparityInterval) -> BinaryMask {
    let data = dm
        .d
        .iter()
        .zip(&dm.valid)
        .map(|(&d, &ok)| (ok && interval.contains(disparity_bin(d))) as u8)
        .collect();
    BinaryMask {
        width: dm.width,
        height: dm.height,
        data,
    }
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RoiRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl RoiRect {
    pub fn full(width: usize, height: usize) -> Self {
        RoiRect {
            x0: 0,
            y0: 0,
            x1: width - 1,
            y1: height - 1,
        }
    }

    pub fn width(&self) -> usize {
        self.x1 + 1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 + 1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }

    pub fn union(&self, other: &RoiRect) -> RoiRect {
        RoiRect {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x0 <= self.x1 && self.y0 <= self.y1 && self.x1 < width && self.y1 < height
    }
}

/// Tightest rectangle around the foreground, grown by `margin` and clamped.
pub fn bounding_rect(mask: &BinaryMask, margin: usize) -> Result<RoiRect> {
    let mut rect: Option<RoiRect> = None;
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) {
                let p = RoiRect {
                    x0: x,
                    y0: y,
                    x1: x,
                    y1: y,
                };
                rect = Some(rect.map_or(p, |r| r.union(&p)));
            }
        }
    }
    let r = rect.ok_or(Error::EmptyMask)?;
    Ok(RoiRect {
        x0: r.x0.saturating_sub(margin),
        y0: r.y0.saturating_sub(margin),
        x1: (r.x1 + margin).min(mask.width - 1),
        y1: (r.y1 + margin).min(mask.height - 1),
    })
}

/// Everything derived from one disparity map.
#[derive(Debug, Clone)]
pub struct Prior {
    pub interval: DisparityInterval,
    pub mask: BinaryMask,
    pub roi: RoiRect,
}

pub fn estimate_interval(dm: &DisparityMap, params: &PriorParams) -> Result<DisparityInterval> {
    let h = disparity_histogram(dm)?;
    let th = PriorThresholds::new(h.total, params);
    let d_th = find_foreground_peak(&h, th.n_th1, params.peak_rule)?;
    Ok(grow_interval(&h, d_th, th.n_th2))
}

/// Prior mask and ROI for a known interval.
pub fn apply_interval(
    dm: &DisparityMap,
    interval: DisparityInterval,
    params: &PriorParams,
) -> Result<Prior> {
    let mask = build_prior_mask(dm, &interval);
    let roi = bounding_rect(&mask, params.roi_margin)?;
    Ok(Prior {
        interval,
        mask,
        roi,
    })
}

pub fn compute_prior(dm: &DisparityMap, params: &PriorParams) -> Result<Prior> {
    let interval = estimate_interval(dm, params)?;
    apply_interval(dm, interval, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hist(counts: &[(usize, u64)]) -> DisparityHistogram {
        DisparityHistogram::from_counts(counts)
    }

    #[test]
    fn histogram_of_uniform_map() {
        let h = disparity_histogram(&DisparityMap::uniform(100, 100, 10.0)).unwrap();
        assert_eq!(h.total, 10000);
        assert_eq!(h.bins[10], 10000);
        assert_eq!(h.bins.iter().sum::<u64>(), 10000);
        assert_eq!(h.d_max_bin(), Some(10));
    }

    #[test]
    fn histogram_rejects_all_invalid() {
        let dm = DisparityMap {
            width: 2,
            height: 2,
            d: vec![3.0; 4],
            valid: vec![false; 4],
        };
        assert!(matches!(disparity_histogram(&dm), Err(Error::NoValidDisparity)));
    }

    #[test]
    fn histogram_rounding() {
        let dm = DisparityMap::new(3, 1, vec![9.4, 9.6, 9.5], vec![true; 3]).unwrap();
        let h = disparity_histogram(&dm).unwrap();
        assert_eq!(h.bins[9], 1);
        assert_eq!(h.bins[10], 2);
    }

    #[test]
    fn peak_single_bin() {
        let h = hist(&[(10, 10000)]);
        assert_eq!(find_foreground_peak(&h, 100, PeakRule::Nearest).unwrap(), 10);
    }

    #[test]
    fn peak_prefers_nearest() {
        let h = hist(&[(5, 6000), (39, 200), (40, 3000), (41, 200)]);
        assert_eq!(qualifying_peaks(&h, 100), vec![5, 40]);
        assert_eq!(find_foreground_peak(&h, 100, PeakRule::Nearest).unwrap(), 40);
        assert_eq!(find_foreground_peak(&h, 100, PeakRule::MostFrequent).unwrap(), 5);
    }

    #[test]
    fn peak_absent_on_flat_spread() {
        let counts: Vec<_> = (0..200).map(|d| (d, 50)).collect();
        let h = hist(&counts);
        assert_eq!(h.total, 10000);
        let th = PriorThresholds::new(h.total, &PriorParams::default());
        assert!(matches!(
            find_foreground_peak(&h, th.n_th1, PeakRule::Nearest),
            Err(Error::NoForegroundPeak)
        ));
    }

    #[test]
    fn grow_already_exceeds() {
        let h = hist(&[(10, 10000)]);
        let g = grow_interval(&h, 10, 1000);
        assert_eq!((g.d_lo, g.d_hi, g.d_th), (10, 10, 10));
    }

    #[test]
    fn grow_greedy_fixture() {
        // total padded to 10000 by a far-background bin so n_th2 = 1000
        let h = hist(&[(2, 8850), (38, 150), (39, 300), (40, 500), (41, 200)]);
        assert_eq!(h.total, 10000);
        let g = grow_interval(&h, 40, 1000);
        assert_eq!((g.d_lo, g.d_hi), (38, 41));
    }

    #[test]
    fn grow_from_zero_goes_up() {
        let h = hist(&[(0, 10), (1, 5), (2, 5)]);
        let g = grow_interval(&h, 0, 100);
        assert_eq!((g.d_lo, g.d_hi), (0, 2));
    }

    #[test]
    fn grow_crosses_empty_bins() {
        let h = hist(&[(3, 10), (9, 10)]);
        let g = grow_interval(&h, 9, 15);
        assert_eq!((g.d_lo, g.d_hi), (3, 9));
    }

    #[test]
    fn prior_mask_membership() {
        let dm = DisparityMap::new(3, 1, vec![9.4, 10.2, 10.0], vec![true, true, false]).unwrap();
        let iv = DisparityInterval {
            d_lo: 10,
            d_hi: 11,
            d_th: 10,
        };
        assert_eq!(build_prior_mask(&dm, &iv).data, vec![0, 1, 0]);
        let all = build_prior_mask(
            &DisparityMap::uniform(4, 4, 10.0),
            &DisparityInterval {
                d_lo: 10,
                d_hi: 10,
                d_th: 10,
            },
        );
        assert_eq!(all.count(), 16);
    }

    #[test]
    fn rect_cases() {
        let mut m = BinaryMask::zeros(10, 10);
        assert!(matches!(bounding_rect(&m, 0), Err(Error::EmptyMask)));
        m.set(3, 4, true);
        assert_eq!(
            bounding_rect(&m, 0).unwrap(),
            RoiRect {
                x0: 3,
                y0: 4,
                x1: 3,
                y1: 4
            }
        );
        let mut m = BinaryMask::zeros(10, 10);
        m.set(2, 5, true);
        m.set(7, 3, true);
        assert_eq!(
            bounding_rect(&m, 1).unwrap(),
            RoiRect {
                x0: 1,
                y0: 2,
                x1: 8,
                y1: 6
            }
        );
        assert_eq!(bounding_rect(&m, 50).unwrap(), RoiRect::full(10, 10));
    }

    fn arb_hist() -> impl Strategy<Value = DisparityHistogram> {
        prop::collection::vec(0u64..400, 1..60).prop_map(|v| {
            let counts: Vec<_> = v.into_iter().enumerate().collect();
            DisparityHistogram::from_counts(&counts)
        })
    }

    proptest! {
        #[test]
        fn peak_satisfies_conditions(h in arb_hist()) {
            prop_assume!(h.total > 0);
            let th = PriorThresholds::new(h.total, &PriorParams::default());
            prop_assert!(th.n_th1 <= th.n_th2);
            if let Ok(d) = find_foreground_peak(&h, th.n_th1, PeakRule::Nearest) {
                let f = h.count(d as i64);
                prop_assert!(f > h.count(d as i64 - 1));
                prop_assert!(f > h.count(d as i64 + 1));
                prop_assert!(f > th.n_th1);
                prop_assert!(qualifying_peaks(&h, th.n_th1).iter().all(|&p| p <= d));
            }
        }

        #[test]
        fn grown_interval_properties(h in arb_hist(), pick in any::<prop::sample::Index>()) {
            prop_assume!(h.total > 0);
            let populated: Vec<usize> = (0..h.bins.len()).filter(|&d| h.bins[d] > 0).collect();
            let d_th = populated[pick.index(populated.len())];
            let n_th2 = h.total / 10;
            let g = grow_interval(&h, d_th, n_th2);
            prop_assert!(g.d_lo <= d_th && d_th <= g.d_hi);
            let sum: u64 = (g.d_lo..=g.d_hi).map(|d| h.bins[d]).sum();
            let covers_all = g.d_lo <= populated[0] && g.d_hi >= *populated.last().unwrap();
            prop_assert!(sum > n_th2 || covers_all);
        }

        #[test]
        fn count_scaling_is_invariant(h in arb_hist(), k in 1u64..50) {
            prop_assume!(h.total > 0);
            let params = PriorParams::default();
            let scaled = DisparityHistogram {
                bins: h.bins.iter().map(|c| c * k).collect(),
                total: h.total * k,
            };
            let th = PriorThresholds::new(h.total, &params);
            let ths = PriorThresholds::new(scaled.total, &params);
            let a = find_foreground_peak(&h, th.n_th1, PeakRule::Nearest).ok();
            let b = find_foreground_peak(&scaled, ths.n_th1, PeakRule::Nearest).ok();
            prop_assert_eq!(a, b);
            if let Some(d) = a {
                prop_assert_eq!(grow_interval(&h, d, th.n_th2), grow_interval(&scaled, d, ths.n_th2));
            }
        }

        #[test]
        fn prior_mask_count_matches_interval_mass(
            ds in prop::collection::vec(0u16..40 * 16, 1..200),
            lo in 0usize..40,
            span in 0usize..10,
        ) {
            let d: Vec<f64> = ds.iter().map(|&r| r as f64 / 16.0).collect();
            let n = d.len();
            let dm = DisparityMap::new(n, 1, d, vec![true; n]).unwrap();
            let h = disparity_histogram(&dm).unwrap();
            let iv = DisparityInterval { d_lo: lo, d_hi: lo + span, d_th: lo };
            let mass: u64 = (iv.d_lo..=iv.d_hi).map(|b| h.count(b as i64)).sum();
            prop_assert_eq!(build_prior_mask(&dm, &iv).count() as u64, mass);
        }
    }
}
