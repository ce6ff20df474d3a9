//! Command-line driver: `segment`, `eval` and `synth`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{parse_scene_spec, scene_spec_to_text, Config};
use crate::error::{Error, Result};
use crate::media_io::{
    list_numbered, load_masks, load_sequence, numbered_name, write_disparity, write_mask,
    write_overlay,
};
use crate::metrics::{aggregate, format_report, score_sequence, DEFAULT_BOUNDARY_TOL};
use crate::streaming::segment_stream;
use crate::synth::{generate_scene, SceneSpec, RNG_ALGORITHM};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_PIPELINE: i32 = 3;

/// Name of the metadata file `synth` writes next to the scene directories.
pub const METADATA_FILE: &str = "scene.txt";

#[derive(Debug, Parser)]
#[command(name = "stereoseg", version, about = "Unsupervised foreground segmentation of stereo video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Segment a sequence; writes one mask per frame.
    Segment {
        /// `key = value` config file; defaults apply without one.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `key=value` pairs overriding the file.
        overrides: Vec<String>,
    },
    /// Score predicted masks against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Boundary tolerance in pixels.
        #[arg(long, default_value_t = DEFAULT_BOUNDARY_TOL)]
        tol: usize,
    },
    /// Generate a synthetic scene with ground truth.
    Synth {
        /// Scene description; the default scene without one.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::UnknownKey(_) | Error::BadValue { .. } | Error::ShapeOutOfBounds { .. } => {
            EXIT_USAGE
        }
        Error::Io { .. }
        | Error::Image { .. }
        | Error::MissingFile { .. }
        | Error::UnsupportedFormat(_)
        | Error::CountMismatch { .. }
        | Error::DimensionMismatch { .. } => EXIT_IO,
        _ => EXIT_PIPELINE,
    }
}

/// Parse `args` (program name first) and run. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Segment { config, overrides } => cmd_segment(config.as_deref(), &overrides),
        Command::Eval { pred, gt, tol } => cmd_eval(&pred, &gt, tol),
        Command::Synth { spec, out } => cmd_synth(spec.as_deref(), &out),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::bad_value(key, "", "a directory path"))
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if threads == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::bad_value("threads", &threads.to_string(), &e.to_string()))?;
    pool.install(f)
}

pub fn cmd_segment(config: Option<&Path>, overrides: &[String]) -> Result<()> {
    let text = config.map(read_text).transpose()?;
    let cfg = Config::resolve(text.as_deref(), overrides)?;
    eprint!("{}", cfg.to_text());

    let frames_dir = required(&cfg.frames_dir, "frames_dir")?;
    let disparity_dir = required(&cfg.disparity_dir, "disparity_dir")?;
    let output_dir = required(&cfg.output_dir, "output_dir")?;

    with_threads(cfg.threads, || {
        let indices: Vec<usize> = list_numbered(frames_dir)?.into_iter().map(|(i, _)| i).collect();
        let sequence = load_sequence(frames_dir, disparity_dir)?;
        let masks = segment_stream(&sequence, &cfg.seg, |report| {
            if let Some(w) = &report.warning {
                eprintln!("warning: {w}");
            }
            eprintln!("{}", report.progress_line());
        })?;

        create_dir(output_dir)?;
        if let Some(dir) = &cfg.overlay_dir {
            create_dir(dir)?;
        }
        for ((mask, frame), index) in masks.iter().zip(&sequence.frames).zip(&indices) {
            let name = numbered_name(*index, "png");
            write_mask(mask, &output_dir.join(&name))?;
            if let Some(dir) = &cfg.overlay_dir {
                write_overlay(frame, mask, &dir.join(&name))?;
            }
        }
        Ok(())
    })
}

pub fn cmd_eval(pred: &Path, gt: &Path, tol: usize) -> Result<()> {
    let preds = load_masks(pred)?;
    let gts = load_masks(gt)?;
    let scores = score_sequence(&preds, &gts, tol)?;
    let report = aggregate(&scores)?;
    print!("{}", format_report(&scores, &report));
    Ok(())
}

pub fn cmd_synth(spec: Option<&Path>, out: &Path) -> Result<()> {
    let spec = match spec {
        Some(path) => parse_scene_spec(&read_text(path)?)?,
        None => SceneSpec::default(),
    };
    let scene = generate_scene(&spec)?;

    let (frames, disparity, gt) = (out.join("frames"), out.join("disparity"), out.join("gt"));
    for dir in [&frames, &disparity, &gt] {
        create_dir(dir)?;
    }
    for (t, rgb) in scene.rgb.iter().enumerate() {
        let name = numbered_name(t, "png");
        let path = frames.join(&name);
        rgb.save(&path).map_err(|e| Error::image(&path, e))?;
        write_disparity(&scene.sequence.disparities[t], &disparity.join(&name))?;
        write_mask(&scene.gt_masks[t], &gt.join(&name))?;
    }

    let metadata = format!("# rng = {RNG_ALGORITHM}\n{}", scene_spec_to_text(&spec));
    let path = out.join(METADATA_FILE);
    fs::write(&path, &metadata).map_err(|e| Error::io(&path, e))?;
    eprint!("{metadata}");
    Ok(())
}
