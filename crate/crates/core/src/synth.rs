//! Deterministic synthetic stereo scenes and an exhaustive min-cut oracle.

use std::fmt;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph_cut::{energy, EnergyGraph};
use crate::media_io::{BinaryMask, DisparityMap, Frame, StereoSequence, DISPARITY_SCALE};

/// Recorded in scene metadata so a scene can be regenerated.
pub const RNG_ALGORITHM: &str = "ChaCha8Rng/seed_from_u64";

/// Pixels closer than this to the shape boundary never become invalid.
const CLEAN_MARGIN: i64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Ellipse,
    Rectangle,
}

impl FromStr for Shape {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "ellipse" => Ok(Shape::Ellipse),
            "rectangle" | "rect" => Ok(Shape::Rectangle),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shape::Ellipse => "ellipse",
            Shape::Rectangle => "rectangle",
        })
    }
}

/// Foreground shape with its center moving linearly over time. Radii are
/// half-axes (ellipse) or half-sizes (rectangle) in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    pub shape: Shape,
    pub center: (f64, f64),
    pub radius: (f64, f64),
    /// Pixels per frame.
    pub velocity: (f64, f64),
    pub fg_disparity: f64,
    pub fg_jitter: f64,
    pub bg_disparity: f64,
    pub bg_jitter: f64,
    pub fg_color: [u8; 3],
    pub bg_color: [u8; 3],
    /// Per-channel uniform integer noise amplitude.
    pub fg_noise: u8,
    pub bg_noise: u8,
    pub invalid_fraction: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 160,
            height: 120,
            n_frames: 20,
            shape: Shape::Ellipse,
            center: (60.0, 50.0),
            radius: (32.0, 24.0),
            velocity: (0.5, 0.25),
            fg_disparity: 40.0,
            fg_jitter: 2.0,
            bg_disparity: 5.0,
            bg_jitter: 2.0,
            fg_color: [200, 60, 60],
            bg_color: [60, 90, 180],
            fg_noise: 12,
            bg_noise: 12,
            invalid_fraction: 0.05,
            seed: 7,
        }
    }
}

impl SceneSpec {
    pub fn center_at(&self, t: usize) -> (f64, f64) {
        (
            self.center.0 + self.velocity.0 * t as f64,
            self.center.1 + self.velocity.1 * t as f64,
        )
    }

    pub fn inside(&self, t: usize, x: usize, y: usize) -> bool {
        let (cx, cy) = self.center_at(t);
        let dx = (x as f64 - cx) / self.radius.0;
        let dy = (y as f64 - cy) / self.radius.1;
        match self.shape {
            Shape::Ellipse => dx * dx + dy * dy <= 1.0,
            Shape::Rectangle => dx.abs() <= 1.0 && dy.abs() <= 1.0,
        }
    }

    /// Continuous shape area.
    pub fn area(&self) -> f64 {
        match self.shape {
            Shape::Ellipse => std::f64::consts::PI * self.radius.0 * self.radius.1,
            Shape::Rectangle => 4.0 * self.radius.0 * self.radius.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, v: String, expected: &str| Err(Error::bad_value(key, &v, expected));
        if self.width == 0 || self.height == 0 {
            return bad("width/height", format!("{}x{}", self.width, self.height), "> 0");
        }
        if self.n_frames == 0 {
            return bad("n_frames", self.n_frames.to_string(), ">= 1");
        }
        if !(self.radius.0 > 0.0 && self.radius.1 > 0.0) {
            return bad("radius", format!("{:?}", self.radius), "> 0");
        }
        if self.fg_disparity <= self.bg_disparity || self.fg_disparity.is_nan() {
            return bad(
                "fg_disparity",
                self.fg_disparity.to_string(),
                "greater than bg_disparity",
            );
        }
        if self.fg_jitter < 0.0 || self.bg_jitter < 0.0 {
            return bad("jitter", format!("{}/{}", self.fg_jitter, self.bg_jitter), ">= 0");
        }
        if self.bg_disparity - self.bg_jitter <= 0.0 {
            return bad(
                "bg_disparity",
                self.bg_disparity.to_string(),
                "bg_disparity - bg_jitter > 0",
            );
        }
        if self.fg_disparity + self.fg_jitter >= u16::MAX as f64 / DISPARITY_SCALE {
            return bad("fg_disparity", self.fg_disparity.to_string(), "< 4096 - fg_jitter");
        }
        if !(0.0..1.0).contains(&self.invalid_fraction) {
            return bad("invalid_fraction", self.invalid_fraction.to_string(), "in [0, 1)");
        }
        // linear motion: the extremes are at the first and last frame
        for t in [0, self.n_frames - 1] {
            let (cx, cy) = self.center_at(t);
            let fits = cx - self.radius.0 >= 0.0
                && cy - self.radius.1 >= 0.0
                && cx + self.radius.0 <= (self.width - 1) as f64
                && cy + self.radius.1 <= (self.height - 1) as f64;
            if !fits {
                return Err(Error::ShapeOutOfBounds { frame: t });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub spec: SceneSpec,
    /// Rendered left view before color conversion.
    pub rgb: Vec<RgbImage>,
    pub sequence: StereoSequence,
    pub gt_masks: Vec<BinaryMask>,
}

fn jitter_color(rng: &mut ChaCha8Rng, base: [u8; 3], noise: u8) -> [u8; 3] {
    let a = noise as i32;
    base.map(|c| (c as i32 + rng.gen_range(-a..=a)).clamp(0, 255) as u8)
}

/// Disparity with uniform jitter, snapped to the storage fixed point.
fn jitter_disparity(rng: &mut ChaCha8Rng, mean: f64, jitter: f64) -> f64 {
    let d = if jitter > 0.0 {
        mean + rng.gen_range(-jitter..=jitter)
    } else {
        mean
    };
    (d * DISPARITY_SCALE).round() / DISPARITY_SCALE
}

/// Pixels within `CLEAN_MARGIN` (Chebyshev) of a mask boundary.
fn near_boundary(mask: &BinaryMask) -> Vec<bool> {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut out = vec![false; mask.data.len()];
    for y in 0..h {
        for x in 0..w {
            let here = mask.get(x as usize, y as usize);
            let mut near = false;
            'scan: for dy in -CLEAN_MARGIN..=CLEAN_MARGIN {
                for dx in -CLEAN_MARGIN..=CLEAN_MARGIN {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0 && ny >= 0 && nx < w && ny < h && mask.get(nx as usize, ny as usize) != here {
                        near = true;
                        break 'scan;
                    }
                }
            }
            out[(y * w + x) as usize] = near;
        }
    }
    out
}

pub fn generate_scene(spec: &SceneSpec) -> Result<SynthScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width, spec.height);
    let mut rgb = Vec::with_capacity(spec.n_frames);
    let mut frames = Vec::with_capacity(spec.n_frames);
    let mut disparities = Vec::with_capacity(spec.n_frames);
    let mut gt_masks = Vec::with_capacity(spec.n_frames);

    for t in 0..spec.n_frames {
        let mut gt = BinaryMask::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                gt.set(x, y, spec.inside(t, x, y));
            }
        }
        let protected = near_boundary(&gt);
        let mut img = RgbImage::new(w as u32, h as u32);
        let mut d = vec![0.0; w * h];
        let mut valid = vec![true; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let fg = gt.get(x, y);
                let color = if fg {
                    jitter_color(&mut rng, spec.fg_color, spec.fg_noise)
                } else {
                    jitter_color(&mut rng, spec.bg_color, spec.bg_noise)
                };
                img.put_pixel(x as u32, y as u32, Rgb(color));
                d[i] = if fg {
                    jitter_disparity(&mut rng, spec.fg_disparity, spec.fg_jitter)
                } else {
                    jitter_disparity(&mut rng, spec.bg_disparity, spec.bg_jitter)
                };
                // always draw, so the stream does not depend on the margin
                let drop = rng.gen::<f64>() < spec.invalid_fraction;
                if drop && !protected[i] {
                    valid[i] = false;
                    d[i] = 0.0;
                }
            }
        }
        frames.push(Frame::from_rgb(&img, t));
        disparities.push(DisparityMap::new(w, h, d, valid)?);
        rgb.push(img);
        gt_masks.push(gt);
    }

    Ok(SynthScene {
        spec: spec.clone(),
        rgb,
        sequence: StereoSequence::new(frames, disparities)?,
        gt_masks,
    })
}

/// Exhaustive minimum over all `2^n` labelings. Ties keep the
/// lexicographically smallest labeling in node order.
pub fn brute_force_mincut(graph: &EnergyGraph) -> Result<(Vec<u8>, f64)> {
    let n = graph.len();
    if n > 20 {
        return Err(Error::TooLarge(n));
    }
    let mut best: Option<(Vec<u8>, f64)> = None;
    let mut labels = vec![0u8; n];
    for code in 0u32..(1u32 << n) {
        for (i, l) in labels.iter_mut().enumerate() {
            *l = ((code >> (n - 1 - i)) & 1) as u8;
        }
        let e = energy(graph, &labels).total;
        if best.as_ref().is_none_or(|(_, b)| e < *b) {
            best = Some((labels.clone(), e));
        }
    }
    Ok(best.expect("at least the empty labeling"))
}

/// Random graph with `1..=max_nodes` nodes, costs and weights uniform in
/// `[0, 10]`, each node pair joined with probability one half.
pub fn random_graph(rng: &mut impl Rng, max_nodes: usize) -> EnergyGraph {
    let n = rng.gen_range(1..=max_nodes);
    let cost0 = (0..n).map(|_| rng.gen_range(0.0..=10.0)).collect();
    let cost1 = (0..n).map(|_| rng.gen_range(0.0..=10.0)).collect();
    let mut edges = Vec::new();
    for a in 0..n as u32 {
        for b in a + 1..n as u32 {
            if rng.gen_bool(0.5) {
                edges.push((a, b, rng.gen_range(0.0..=10.0)));
            }
        }
    }
    EnergyGraph::from_parts(cost0, cost1, edges).expect("generated graph is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_cut::min_cut;

    fn small_spec() -> SceneSpec {
        SceneSpec {
            width: 48,
            height: 40,
            n_frames: 3,
            center: (20.0, 18.0),
            radius: (10.0, 8.0),
            velocity: (1.0, 0.5),
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = generate_scene(&small_spec()).unwrap();
        let b = generate_scene(&small_spec()).unwrap();
        assert_eq!(a.rgb, b.rgb);
        assert_eq!(a.sequence.disparities, b.sequence.disparities);
        assert_eq!(a.gt_masks, b.gt_masks);
        let c = generate_scene(&SceneSpec {
            seed: 8,
            ..small_spec()
        })
        .unwrap();
        assert_ne!(a.rgb, c.rgb);
    }

    #[test]
    fn noiseless_scene_is_exact() {
        let spec = SceneSpec {
            fg_jitter: 0.0,
            bg_jitter: 0.0,
            fg_noise: 0,
            bg_noise: 0,
            invalid_fraction: 0.0,
            ..small_spec()
        };
        let s = generate_scene(&spec).unwrap();
        for (t, gt) in s.gt_masks.iter().enumerate() {
            let dm = &s.sequence.disparities[t];
            for y in 0..spec.height {
                for x in 0..spec.width {
                    let px = s.rgb[t].get_pixel(x as u32, y as u32).0;
                    if gt.get(x, y) {
                        assert_eq!(dm.get(x, y), Some(40.0));
                        assert_eq!(px, spec.fg_color);
                    } else {
                        assert_eq!(dm.get(x, y), Some(5.0));
                        assert_eq!(px, spec.bg_color);
                    }
                }
            }
        }
    }

    #[test]
    fn disparities_separate() {
        let s = generate_scene(&SceneSpec::default()).unwrap();
        let (mut fg_min, mut bg_max) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut invalid = 0usize;
        for (dm, gt) in s.sequence.disparities.iter().zip(&s.gt_masks) {
            let protected = near_boundary(gt);
            for (i, &d) in dm.d.iter().enumerate() {
                if !dm.valid[i] {
                    invalid += 1;
                    assert!(!protected[i]);
                    continue;
                }
                if gt.data[i] != 0 {
                    fg_min = fg_min.min(d);
                } else {
                    bg_max = bg_max.max(d);
                }
            }
        }
        assert!(fg_min > bg_max, "{fg_min} vs {bg_max}");
        let frac = invalid as f64 / (160.0 * 120.0 * 20.0);
        assert!((0.04..0.05).contains(&frac), "invalid fraction {frac}");
    }

    #[test]
    fn mask_area_matches_shape() {
        let spec = SceneSpec::default();
        let s = generate_scene(&spec).unwrap();
        for (t, gt) in s.gt_masks.iter().enumerate() {
            let support = (0..spec.height)
                .flat_map(|y| (0..spec.width).map(move |x| (x, y)))
                .filter(|&(x, y)| spec.inside(t, x, y))
                .count();
            assert_eq!(gt.count(), support);
            let rel = (gt.count() as f64 - spec.area()).abs() / spec.area();
            assert!(rel < 0.02, "frame {t}: {} vs {}", gt.count(), spec.area());
        }
    }

    #[test]
    fn out_of_bounds_rejected() {
        let spec = SceneSpec {
            velocity: (5.0, 0.0),
            ..Default::default()
        };
        assert!(matches!(
            generate_scene(&spec),
            Err(Error::ShapeOutOfBounds { frame: 19 })
        ));
    }

    #[test]
    fn brute_force_basics() {
        let g = EnergyGraph::from_parts(vec![1.0], vec![0.0], vec![]).unwrap();
        assert_eq!(brute_force_mincut(&g).unwrap(), (vec![1], 0.0));
        let g = EnergyGraph::from_parts(vec![0.0; 21], vec![0.0; 21], vec![]).unwrap();
        assert!(matches!(brute_force_mincut(&g), Err(Error::TooLarge(21))));
        let g = EnergyGraph::from_parts(vec![10.0, 0.0], vec![0.0, 10.0], vec![(0, 1, 100.0)]).unwrap();
        assert_eq!(brute_force_mincut(&g).unwrap(), (vec![0, 0], 10.0));
    }

    #[test]
    fn brute_force_is_a_lower_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let g = random_graph(&mut rng, 10);
            let (_, best) = brute_force_mincut(&g).unwrap();
            for _ in 0..20 {
                let l: Vec<u8> = (0..g.len()).map(|_| rng.gen_range(0..=1)).collect();
                assert!(best <= energy(&g, &l).total);
            }
        }
    }

    #[test]
    fn min_cut_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..100 {
            let g = random_graph(&mut rng, 12);
            let (_, best) = brute_force_mincut(&g).unwrap();
            let got = energy(&g, &min_cut(&g)).total;
            assert!((got - best).abs() <= 1e-9, "{got} vs {best}");
        }
    }

    #[test]
    fn optimum_invariant_under_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let g = random_graph(&mut rng, 9);
            let k = rng.gen_range(0.1..20.0);
            let scaled = EnergyGraph::from_parts(
                g.cost0.iter().map(|c| c * k).collect(),
                g.cost1.iter().map(|c| c * k).collect(),
                g.edges.iter().map(|&(a, b, w)| (a, b, w * k)).collect(),
            )
            .unwrap();
            let l = min_cut(&g);
            let e = energy(&g, &l).total;
            let es = energy(&scaled, &l).total;
            assert!((es - k * e).abs() <= 1e-9 * (1.0 + es));
            let (_, best_scaled) = brute_force_mincut(&scaled).unwrap();
            assert!((es - best_scaled).abs() <= 1e-9 * (1.0 + es));
        }
    }
}
