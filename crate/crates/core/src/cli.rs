//! Command-line front end. `run` returns the process exit code.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::dataset::{run_dataset, DatasetManifest};
use crate::eval::synth::{generate_forgery, procedural_texture, sgo_texture, Rect, SyntheticForgerySpec, TransformStep};
use crate::imaging::{load_image, to_gray, upscale_by, RasterImage};
use crate::keypoints::{coverage_rate, detect_with};
use crate::localization::write_traces;
use crate::mask::TamperMask;
use crate::pipeline::detect;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const SUMMARY_SCHEMA: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "cmfd", version, about = "Copy-move forgery detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Detect and localize copy-move regions in one image.
    Detect(DetectArgs),
    /// Run the pipeline over a manifest and write CSV/JSON reports.
    Eval(EvalArgs),
    /// Print the keypoint coverage rate at several upscaling factors.
    Coverage(CoverageArgs),
    /// Write a synthetic forgery (or an authentic texture) and its mask.
    Generate(GenerateArgs),
}

/// Flags layered over the config file, which is layered over the defaults.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// TOML or JSON file mirroring the flat configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated matching stages to disable: gray, entropy, lg, all.
    #[arg(long, value_delimiter = ',')]
    ablate: Vec<String>,
    #[arg(long)]
    scale_override: Option<u32>,
    #[arg(long)]
    min_pixels: Option<usize>,
    /// Minimum inlier count for a model to be kept.
    #[arg(long)]
    n_in: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.rng_seed = s;
        }
        cfg.ablate(&self.ablate)?;
        if self.scale_override.is_some() {
            cfg.scale_override = self.scale_override;
        }
        if let Some(m) = self.min_pixels {
            cfg.min_pixels = m;
        }
        if let Some(n) = self.n_in {
            cfg.n_in = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct DetectArgs {
    image: PathBuf,
    #[arg(long)]
    mask_out: Option<PathBuf>,
    /// Per-iteration localization log (JSON lines).
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    manifest: PathBuf,
    #[arg(long, default_value = "report")]
    out_dir: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args, Debug)]
struct CoverageArgs {
    image: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    scales: Vec<u32>,
    #[arg(long, default_value_t = 16)]
    window: u32,
    #[arg(long, default_value_t = 4)]
    min_count: u32,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Texture {
    Plain,
    Sgo,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mask_out: Option<PathBuf>,
    /// Image to tamper; a procedural texture is used when absent.
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    size: u32,
    #[arg(long, value_enum, default_value_t = Texture::Plain)]
    texture: Texture,
    /// Forgery recipe as JSON; overrides the geometry flags below.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Patch rectangle as x,y,width,height.
    #[arg(long, value_delimiter = ',', default_value = "64,64,96,96")]
    patch: Vec<u32>,
    #[arg(long, default_value_t = 240.0, allow_negative_numbers = true)]
    dx: f64,
    #[arg(long, default_value_t = 200.0, allow_negative_numbers = true)]
    dy: f64,
    #[arg(long, allow_negative_numbers = true)]
    rotate: Option<f64>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long, default_value_t = 1)]
    copies: u32,
    /// Write the untouched source and an empty mask.
    #[arg(long)]
    authentic: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Serialize)]
struct DetectSummary<'a> {
    schema: u32,
    image: &'a str,
    decision: bool,
    n_keypoints: usize,
    n_matches: usize,
    iterations: usize,
    accepted_models: usize,
    mask_pixels: usize,
    scale: u32,
    runtime_ms: u64,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. }
        | Error::Format { .. }
        | Error::PixelBudget { .. }
        | Error::InvalidParameter(_)
        | Error::InputTooSmall { .. }
        | Error::EmptyInput(_)
        | Error::Shape(_)
        | Error::ForgerySpec(_)
        | Error::Config(_)
        | Error::Manifest(_) => EXIT_USAGE,
        Error::PointAtInfinity | Error::Degenerate | Error::InsufficientData { .. } | Error::NoModel => EXIT_INTERNAL,
    }
}

/// Parses `args` (program name first) and runs the selected command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Detect(a) => cmd_detect(&a, out),
        Command::Eval(a) => cmd_eval(&a, out, err),
        Command::Coverage(a) => cmd_coverage(&a, out),
        Command::Generate(a) => cmd_generate(&a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    }
}

fn cmd_detect(a: &DetectArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let start = Instant::now();
    let gray = to_gray(&load_image(&a.image)?);
    let det = detect(&gray, &cfg)?;
    let runtime_ms = start.elapsed().as_millis() as u64;
    if let Some(p) = &a.mask_out {
        det.mask.save_png(p)?;
    }
    if let Some(p) = &a.trace_out {
        write_traces(&det.localization.traces, p)?;
    }
    let image = a.image.display().to_string();
    let summary = DetectSummary {
        schema: SUMMARY_SCHEMA,
        image: &image,
        decision: det.decision,
        n_keypoints: det.analysis.keypoints.len(),
        n_matches: det.analysis.matches.len(),
        iterations: det.iterations(),
        accepted_models: det.accepted_models(),
        mask_pixels: det.mask.count(),
        scale: det.analysis.scale,
        runtime_ms,
    };
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    writeln!(out, "{text}").map_err(stdout_err)
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let report = run_dataset(&manifest, &cfg)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|source| Error::Io {
        path: a.out_dir.clone(),
        source,
    })?;
    let csv = a.out_dir.join("report.csv");
    let json = a.out_dir.join("report.json");
    report.write_csv(&csv)?;
    report.write_json(&json)?;
    for r in report.rows.iter().filter(|r| r.error.is_some()) {
        let _ = writeln!(err, "warning: {}: {}", r.image_path, r.error.as_deref().unwrap_or(""));
    }
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    writeln!(
        out,
        "images={} errors={} tpr={} fpr={} f_i={} f_p={} f_measure={}\nwrote {} and {}",
        report.n_images,
        report.n_errors,
        fmt(report.image.tpr),
        fmt(report.image.fpr),
        fmt(report.f_i),
        fmt(report.f_p),
        fmt(report.f_measure),
        csv.display(),
        json.display()
    )
    .map_err(stdout_err)
}

/// Coverage of one grayscale image upscaled by `s`, measured on the
/// original pixel grid.
pub fn coverage_at_scale(gray: &crate::imaging::GrayImage, s: u32, cfg: &PipelineConfig, window: u32, min_count: u32) -> Result<f64> {
    if s == 0 {
        return Err(Error::InvalidParameter("scales must be positive".into()));
    }
    let up = upscale_by(gray, s, cfg.pixel_budget)?;
    let mut kps = detect_with(&up, &cfg.sift())?;
    for k in &mut kps.keypoints {
        k.x /= s as f64;
        k.y /= s as f64;
    }
    Ok(coverage_rate(&kps, gray.width, gray.height, window, min_count))
}

fn cmd_coverage(a: &CoverageArgs, out: &mut dyn Write) -> Result<()> {
    if a.scales.is_empty() || a.scales.contains(&0) {
        return Err(Error::InvalidParameter("scales must be positive integers".into()));
    }
    if a.window == 0 {
        return Err(Error::InvalidParameter("window must be positive".into()));
    }
    let cfg = a.cfg.resolve()?;
    let gray = to_gray(&load_image(&a.image)?);
    writeln!(out, "scale,coverage").map_err(stdout_err)?;
    for &s in &a.scales {
        let c = coverage_at_scale(&gray, s, &cfg, a.window, a.min_count)?;
        writeln!(out, "{s},{c:.6}").map_err(stdout_err)?;
    }
    Ok(())
}

fn read_spec(p: &Path) -> Result<SyntheticForgerySpec> {
    let text = std::fs::read_to_string(p).map_err(|source| Error::Io {
        path: p.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::ForgerySpec(format!("{}: {e}", p.display())))
}

fn cmd_generate(a: &GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let source = match &a.source {
        Some(p) => load_image(p)?,
        None => {
            if a.size < 16 {
                return Err(Error::InvalidParameter("size must be at least 16".into()));
            }
            RasterImage::from_gray(&match a.texture {
                Texture::Plain => procedural_texture(a.size, a.size, a.seed),
                Texture::Sgo => sgo_texture(a.size, a.size, a.seed),
            })
        }
    };
    let (image, mask) = if a.authentic {
        let m = TamperMask::new(source.width, source.height);
        (source, m)
    } else {
        let spec = match &a.spec {
            Some(p) => read_spec(p)?,
            None => {
                if a.patch.len() != 4 {
                    return Err(Error::InvalidParameter("--patch takes x,y,width,height".into()));
                }
                let mut transform = Vec::new();
                if let Some(f) = a.scale {
                    transform.push(TransformStep::Scale { factor: f });
                }
                if let Some(d) = a.rotate {
                    transform.push(TransformStep::Rotate { degrees: d });
                }
                transform.push(TransformStep::Translate { dx: a.dx, dy: a.dy });
                SyntheticForgerySpec {
                    patch: Rect::new(a.patch[0], a.patch[1], a.patch[2], a.patch[3]),
                    transform,
                    copies: a.copies,
                    post_process: Default::default(),
                }
            }
        };
        generate_forgery(&source, &spec, a.seed)?
    };
    image.save_png(&a.out)?;
    if let Some(p) = &a.mask_out {
        mask.save_png(p)?;
    }
    writeln!(out, "wrote {} ({} tampered pixels)", a.out.display(), mask.count()).map_err(stdout_err)
}
