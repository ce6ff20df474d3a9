//! Plain `key = value` configuration for the CLI.
//!
//! One pair per line, `#` starts a comment. Values from a file override the
//! built-in defaults and command-line pairs override the file.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{MAX_CELLS, NDIM};
use crate::metrics::DEFAULT_BOUNDARY_TOL;
use crate::streaming::SegmentationParams;
use crate::synth::{SceneSpec, Shape};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seg: SegmentationParams,
    pub boundary_tol: usize,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    pub frames_dir: Option<PathBuf>,
    pub disparity_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub overlay_dir: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seg: SegmentationParams::default(),
            boundary_tol: DEFAULT_BOUNDARY_TOL,
            threads: 0,
            frames_dir: None,
            disparity_dir: None,
            output_dir: None,
            overlay_dir: None,
        }
    }
}

/// Split text into `(key, value)` pairs, dropping comments and blank lines.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        out.push(split_pair(line).ok_or_else(|| {
            Error::bad_value(&format!("line {}", n + 1), line, "`key = value`")
        })?);
    }
    Ok(out)
}

pub fn split_pair(s: &str) -> Option<(String, String)> {
    let (k, v) = s.split_once('=')?;
    let k = k.trim();
    if k.is_empty() {
        return None;
    }
    Some((k.to_string(), v.trim().to_string()))
}

fn num<T: FromStr>(key: &str, value: &str, expected: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::bad_value(key, value, expected))
}

fn non_negative(key: &str, value: &str) -> Result<f64> {
    let v: f64 = num(key, value, "number >= 0")?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(Error::bad_value(key, value, "number >= 0"))
    }
}

fn positive(key: &str, value: &str) -> Result<f64> {
    let v: f64 = num(key, value, "number > 0")?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::bad_value(key, value, "number > 0"))
    }
}

fn cells(key: &str, value: &str) -> Result<u32> {
    let expected = format!("integer in 1..={MAX_CELLS}");
    let v: u32 = num(key, value, &expected)?;
    if (1..=MAX_CELLS).contains(&v) {
        Ok(v)
    } else {
        Err(Error::bad_value(key, value, &expected))
    }
}

fn at_least_one<T: FromStr + PartialOrd + From<u8>>(key: &str, value: &str) -> Result<T> {
    let v: T = num(key, value, "integer >= 1")?;
    if v >= T::from(1) {
        Ok(v)
    } else {
        Err(Error::bad_value(key, value, "integer >= 1"))
    }
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::bad_value(key, value, "true or false")),
    }
}

fn choice<T: FromStr>(key: &str, value: &str, expected: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::bad_value(key, value, expected))
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl Config {
    /// Defaults, then `file` (if any), then `overrides` in order.
    pub fn resolve(file: Option<&str>, overrides: &[String]) -> Result<Config> {
        let mut cfg = Config::default();
        if let Some(text) = file {
            for (k, v) in parse_pairs(text)? {
                cfg.set(&k, &v)?;
            }
        }
        for o in overrides {
            let (k, v) = split_pair(o)
                .ok_or_else(|| Error::bad_value("override", o, "`key=value`"))?;
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let seg = &mut self.seg;
        match key {
            "l" => seg.l = at_least_one(key, value)?,
            "grid_intensity" => seg.grid.intensity = cells(key, value)?,
            "grid_chroma" => seg.grid.chroma = cells(key, value)?,
            "grid_spatial" => seg.grid.spatial = cells(key, value)?,
            "grid_temporal" => seg.grid.temporal = cells(key, value)?,
            "grid_disparity" => seg.grid.disparity = cells(key, value)?,
            "lambda" => seg.graph.lambda = non_negative(key, value)?,
            "lambda_i" => seg.graph.lambda_i = non_negative(key, value)?,
            "lambda_d" => seg.graph.lambda_d = non_negative(key, value)?,
            "sigma" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                seg.graph.sigma = match parts.len() {
                    1 => [positive(key, parts[0])?; NDIM],
                    NDIM => {
                        let mut s = [0.0; NDIM];
                        for (slot, p) in s.iter_mut().zip(&parts) {
                            *slot = positive(key, p)?;
                        }
                        s
                    }
                    _ => {
                        return Err(Error::bad_value(
                            key,
                            value,
                            "one positive number or 7 comma-separated",
                        ))
                    }
                };
            }
            "tau" => {
                let v: f64 = num(key, value, "number in (0, 1)")?;
                if !(v > 0.0 && v < 1.0) {
                    return Err(Error::bad_value(key, value, "number in (0, 1)"));
                }
                seg.tau = v;
            }
            "nth1_divisor" => seg.prior.nth1_divisor = at_least_one(key, value)?,
            "nth2_divisor" => seg.prior.nth2_divisor = at_least_one(key, value)?,
            "peak_rule" => seg.prior.peak_rule = choice(key, value, "nearest or most_frequent")?,
            "roi_margin" => seg.prior.roi_margin = num(key, value, "integer >= 0")?,
            "prior_mode" => seg.prior_mode = choice(key, value, "window, frame or frozen")?,
            "invalid_d" => seg.invalid_d = choice(key, value, "zero or nearest_valid")?,
            "literal_sign_convention" => seg.graph.literal_sign_convention = flag(key, value)?,
            "boundary_tol" => self.boundary_tol = num(key, value, "integer >= 0")?,
            "threads" => self.threads = num(key, value, "integer >= 0")?,
            "frames_dir" => self.frames_dir = path(value),
            "disparity_dir" => self.disparity_dir = path(value),
            "output_dir" => self.output_dir = path(value),
            "overlay_dir" => self.overlay_dir = path(value),
            _ => return Err(Error::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Every key with its resolved value, in a form `resolve` reads back.
    pub fn to_text(&self) -> String {
        let s = &self.seg;
        let sigma = if s.graph.sigma.iter().all(|&v| v == s.graph.sigma[0]) {
            s.graph.sigma[0].to_string()
        } else {
            s.graph
                .sigma
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut out = String::new();
        let mut put = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("l", &s.l);
        put("grid_intensity", &s.grid.intensity);
        put("grid_chroma", &s.grid.chroma);
        put("grid_spatial", &s.grid.spatial);
        put("grid_temporal", &s.grid.temporal);
        put("grid_disparity", &s.grid.disparity);
        put("lambda", &s.graph.lambda);
        put("lambda_i", &s.graph.lambda_i);
        put("lambda_d", &s.graph.lambda_d);
        put("sigma", &sigma);
        put("tau", &s.tau);
        put("nth1_divisor", &s.prior.nth1_divisor);
        put("nth2_divisor", &s.prior.nth2_divisor);
        put("peak_rule", &s.prior.peak_rule);
        put("roi_margin", &s.prior.roi_margin);
        put("prior_mode", &s.prior_mode);
        put("invalid_d", &s.invalid_d);
        put("literal_sign_convention", &s.graph.literal_sign_convention);
        put("boundary_tol", &self.boundary_tol);
        put("threads", &self.threads);
        for (k, p) in [
            ("frames_dir", &self.frames_dir),
            ("disparity_dir", &self.disparity_dir),
            ("output_dir", &self.output_dir),
            ("overlay_dir", &self.overlay_dir),
        ] {
            if let Some(p) = p {
                put(k, &p.display());
            }
        }
        out
    }
}

fn list<T: FromStr + Copy + Default, const N: usize>(
    key: &str,
    value: &str,
    expected: &str,
) -> Result<[T; N]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(Error::bad_value(key, value, expected));
    }
    let mut out = [T::default(); N];
    for (slot, p) in out.iter_mut().zip(parts) {
        *slot = num(key, p, expected)?;
    }
    Ok(out)
}

fn pair(key: &str, value: &str) -> Result<(f64, f64)> {
    let [a, b] = list::<f64, 2>(key, value, "two comma-separated numbers")?;
    Ok((a, b))
}

/// Scene description for `synth`, same `key = value` syntax.
pub fn parse_scene_spec(text: &str) -> Result<SceneSpec> {
    let mut spec = SceneSpec::default();
    for (key, value) in parse_pairs(text)? {
        let (k, v) = (key.as_str(), value.as_str());
        match k {
            "width" => spec.width = at_least_one(k, v)?,
            "height" => spec.height = at_least_one(k, v)?,
            "n_frames" => spec.n_frames = at_least_one(k, v)?,
            "shape" => spec.shape = choice::<Shape>(k, v, "ellipse or rectangle")?,
            "center" => spec.center = pair(k, v)?,
            "radius" => spec.radius = pair(k, v)?,
            "velocity" => spec.velocity = pair(k, v)?,
            "fg_disparity" => spec.fg_disparity = non_negative(k, v)?,
            "fg_jitter" => spec.fg_jitter = non_negative(k, v)?,
            "bg_disparity" => spec.bg_disparity = non_negative(k, v)?,
            "bg_jitter" => spec.bg_jitter = non_negative(k, v)?,
            "fg_color" => spec.fg_color = list(k, v, "three comma-separated integers 0..=255")?,
            "bg_color" => spec.bg_color = list(k, v, "three comma-separated integers 0..=255")?,
            "fg_noise" => spec.fg_noise = num(k, v, "integer 0..=255")?,
            "bg_noise" => spec.bg_noise = num(k, v, "integer 0..=255")?,
            "invalid_fraction" => {
                let f: f64 = num(k, v, "number in [0, 1)")?;
                if !(0.0..1.0).contains(&f) {
                    return Err(Error::bad_value(k, v, "number in [0, 1)"));
                }
                spec.invalid_fraction = f;
            }
            "seed" => spec.seed = num(k, v, "unsigned integer")?,
            _ => return Err(Error::UnknownKey(key)),
        }
    }
    Ok(spec)
}

pub fn scene_spec_to_text(spec: &SceneSpec) -> String {
    let rgb = |c: [u8; 3]| format!("{},{},{}", c[0], c[1], c[2]);
    let xy = |p: (f64, f64)| format!("{},{}", p.0, p.1);
    [
        ("width", spec.width.to_string()),
        ("height", spec.height.to_string()),
        ("n_frames", spec.n_frames.to_string()),
        ("shape", spec.shape.to_string()),
        ("center", xy(spec.center)),
        ("radius", xy(spec.radius)),
        ("velocity", xy(spec.velocity)),
        ("fg_disparity", spec.fg_disparity.to_string()),
        ("fg_jitter", spec.fg_jitter.to_string()),
        ("bg_disparity", spec.bg_disparity.to_string()),
        ("bg_jitter", spec.bg_jitter.to_string()),
        ("fg_color", rgb(spec.fg_color)),
        ("bg_color", rgb(spec.bg_color)),
        ("fg_noise", spec.fg_noise.to_string()),
        ("bg_noise", spec.bg_noise.to_string()),
        ("invalid_fraction", spec.invalid_fraction.to_string()),
        ("seed", spec.seed.to_string()),
    ]
    .iter()
    .map(|(k, v)| format!("{k} = {v}\n"))
    .collect()
}
