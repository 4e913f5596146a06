//! Command-line front end.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;

use stereomag::dataset::{self, PosedSequence};
use stereomag::fit::{fit_mpi_with_progress, FitConfig, FitReport};
use stereomag::io::{self, MAX_RESOLUTION};
use stereomag::metrics::{self, MetricReport};
use stereomag::render::render_view;
use stereomag::{check, Camera, ColorVariant, Error, Image, MultiplaneImage};

/// Exit status for bad input (files, flags, formats).
pub const EXIT_INPUT: i32 = 2;
/// Exit status for numeric failures and failed self-checks.
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "stereomag", version, about = "Fit, render and evaluate multiplane images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit an MPI to a stereo pair (plus optional extra target views).
    Fit(FitArgs),
    /// Render an MPI at every camera of a camera file.
    Render(RenderArgs),
    /// Render views at equal spacing along a line segment.
    Sweep(SweepArgs),
    /// Synthesize a stereo pair with a scaled baseline and a red-cyan anaglyph.
    Magnify(MagnifyArgs),
    /// PSNR/SSIM between two directories of same-named images.
    Eval(EvalArgs),
    /// Rescale a posed sequence so near content sits at a canonical depth.
    DatasetNormalize(NormalizeArgs),
    /// Keep the longest smooth run, trim its ends and enforce a minimum length.
    DatasetFilter(FilterArgs),
    /// Draw seeded training triplets from a posed sequence.
    DatasetSample(SampleArgs),
    /// Run gradient and renderer cross-validation checks.
    Selfcheck,
}

#[derive(Debug, Clone, Args)]
pub struct FitFlags {
    /// Flat key=value configuration file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub planes: Option<usize>,
    #[arg(long)]
    pub near: Option<f64>,
    #[arg(long)]
    pub far: Option<f64>,
    /// Color variant, or `all` to fit every variant.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PairArgs {
    /// Reference (left) image; the MPI lives in its camera frame.
    #[arg(long)]
    pub left: PathBuf,
    #[arg(long)]
    pub right: PathBuf,
    /// Sequence-format camera file; frames 0 and 1 belong to left and right,
    /// further frames to the `--target` images in order.
    #[arg(long)]
    pub cameras: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    /// Extra supervision views, matched to camera frames 2, 3, ...
    #[arg(long = "target")]
    pub targets: Vec<PathBuf>,
    #[command(flatten)]
    pub flags: FitFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub mpi: PathBuf,
    #[arg(long)]
    pub cameras: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub mpi: PathBuf,
    /// `x0,y0,z0:x1,y1,z1:count`, camera centers in world coordinates.
    #[arg(long)]
    pub path: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MagnifyArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    #[arg(long)]
    pub factor: f64,
    /// Use an already fitted MPI instead of fitting one.
    #[arg(long)]
    pub mpi: Option<PathBuf>,
    #[command(flatten)]
    pub flags: FitFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub rendered: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NormalizeArgs {
    #[arg(long)]
    pub sequence: PathBuf,
    #[arg(long)]
    pub points: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub out_points: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub sequence: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = dataset::TRIM_FRAMES)]
    pub trim: usize,
    #[arg(long, default_value_t = dataset::MIN_CLIP_FRAMES)]
    pub min_len: usize,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub sequence: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Map an error to its exit status.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(e) if !e.is_input_error() => EXIT_NUMERIC,
        _ => EXIT_INPUT,
    }
}

pub fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Render(a) => cmd_render(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Magnify(a) => cmd_magnify(a),
        Command::Eval(a) => cmd_eval(a),
        Command::DatasetNormalize(a) => cmd_normalize(a),
        Command::DatasetFilter(a) => cmd_filter(a),
        Command::DatasetSample(a) => cmd_sample(a),
        Command::Selfcheck => cmd_selfcheck(),
    }
}

fn load_sequence(path: &Path) -> anyhow::Result<PosedSequence> {
    let text = io::read_text(path)?;
    Ok(dataset::parse_sequence(&text, path)?)
}

/// Config file, then flags. Returns the variants to fit.
fn resolve_config(flags: &FitFlags) -> anyhow::Result<(FitConfig, Vec<ColorVariant>)> {
    let mut cfg = match &flags.config {
        Some(p) => FitConfig::parse(&io::read_text(p)?, p)?,
        None => FitConfig::default(),
    };
    if let Some(v) = flags.planes {
        cfg.planes = v;
    }
    if let Some(v) = flags.near {
        cfg.near = v;
    }
    if let Some(v) = flags.far {
        cfg.far = v;
    }
    if let Some(v) = flags.steps {
        cfg.steps = v;
    }
    if let Some(v) = flags.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    let variants = match flags.variant.as_deref() {
        Some("all") => ColorVariant::ALL.to_vec(),
        Some(v) => vec![v.parse::<ColorVariant>()?],
        None => vec![cfg.variant],
    };
    cfg.variant = variants[0];
    cfg.validate()?;
    Ok((cfg, variants))
}

/// Load an image, check it against its camera and downscale if oversized.
fn load_view(path: &Path, cam: &Camera) -> anyhow::Result<(Image, Camera)> {
    let img = io::read_image(path)?;
    if (img.width(), img.height()) != (cam.width(), cam.height()) {
        return Err(Error::ShapeMismatch(format!(
            "{} is {}x{} but its camera is {}x{}",
            path.display(),
            img.width(),
            img.height(),
            cam.width(),
            cam.height()
        ))
        .into());
    }
    let (img, cam, resized) = io::fit_resolution(&img, cam, MAX_RESOLUTION)?;
    if resized {
        eprintln!(
            "warning: {} downscaled to {}x{}",
            path.display(),
            img.width(),
            img.height()
        );
    }
    Ok((img, cam))
}

struct Pair {
    left: (Image, Camera),
    right: (Image, Camera),
    extra: Vec<(Image, Camera)>,
}

fn load_pair(pair: &PairArgs, targets: &[PathBuf]) -> anyhow::Result<Pair> {
    let seq = load_sequence(&pair.cameras)?;
    if seq.len() < 2 + targets.len() {
        return Err(Error::TooShort(format!(
            "{} has {} cameras, need {}",
            pair.cameras.display(),
            seq.len(),
            2 + targets.len()
        ))
        .into());
    }
    let left = load_view(&pair.left, &seq.frames[0].camera)?;
    let right = load_view(&pair.right, &seq.frames[1].camera)?;
    let extra = targets
        .iter()
        .zip(&seq.frames[2..])
        .map(|(p, f)| load_view(p, &f.camera))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(Pair { left, right, extra })
}

fn fit_pair(pair: &Pair, cfg: &FitConfig) -> anyhow::Result<(MultiplaneImage, FitReport)> {
    let mut targets = vec![pair.left.clone(), pair.right.clone()];
    targets.extend(pair.extra.iter().cloned());
    let every = cfg.log_every.max(1);
    let (mpi, report) = fit_mpi_with_progress(
        &pair.left.0,
        &pair.right.0,
        &pair.left.1,
        &pair.right.1,
        &targets,
        cfg,
        |step, loss| {
            if step % every == 0 {
                eprintln!("[{}] step {step} loss {loss:.6}", cfg.variant);
            }
        },
    )?;
    Ok((mpi, report))
}

fn write_report(dir: &Path, report: &FitReport, cfg: &FitConfig) -> anyhow::Result<()> {
    io::write_atomic(&dir.join("report.json"), report.to_json().as_bytes())?;
    io::write_atomic(&dir.join("report.txt"), report.to_text(cfg.log_every).as_bytes())?;
    io::write_atomic(&dir.join("config.txt"), cfg.to_kv().as_bytes())?;
    Ok(())
}

fn cmd_fit(a: FitArgs) -> anyhow::Result<i32> {
    let (cfg, variants) = resolve_config(&a.flags)?;
    let pair = load_pair(&a.pair, &a.targets)?;
    let many = variants.len() > 1;
    for variant in variants {
        let cfg = FitConfig { variant, ..cfg.clone() };
        let (mpi, report) = fit_pair(&pair, &cfg)?;
        let dir = if many { a.out.join(variant.name()) } else { a.out.clone() };
        io::save_mpi(&dir, &mpi)?;
        write_report(&dir, &report, &cfg)?;
        for v in &report.views {
            println!("{variant} view {} psnr {:.3}", v.view, v.psnr);
        }
    }
    Ok(0)
}

fn frame_name(i: usize, count: usize) -> String {
    let digits = count.saturating_sub(1).to_string().len().max(3);
    format!("frame_{i:0digits$}.png")
}

fn cmd_render(a: RenderArgs) -> anyhow::Result<i32> {
    let mpi = io::load_mpi(&a.mpi)?;
    let seq = load_sequence(&a.cameras)?;
    io::create_dir(&a.out)?;
    for (i, f) in seq.frames.iter().enumerate() {
        let img = render_view(&mpi, &f.camera)?.image;
        io::write_image(&a.out.join(frame_name(i, seq.len())), &img, false)?;
    }
    println!("rendered {} views", seq.len());
    Ok(0)
}

/// Parse `x0,y0,z0:x1,y1,z1:count`.
pub fn parse_path_spec(spec: &str) -> anyhow::Result<(Vector3<f64>, Vector3<f64>, usize)> {
    let parts: Vec<&str> = spec.split(':').collect();
    let point = |s: &str| -> anyhow::Result<Vector3<f64>> {
        let v = s
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("bad point `{s}` in path spec"))?;
        if v.len() != 3 || v.iter().any(|x| !x.is_finite()) {
            bail!("point `{s}` needs three finite coordinates");
        }
        Ok(Vector3::new(v[0], v[1], v[2]))
    };
    if parts.len() != 3 {
        bail!("path spec must look like `x0,y0,z0:x1,y1,z1:count`, got `{spec}`");
    }
    let count: usize = parts[2].trim().parse().with_context(|| format!("bad frame count `{}`", parts[2]))?;
    if count < 2 {
        bail!("a sweep needs at least 2 frames");
    }
    Ok((point(parts[0])?, point(parts[1])?, count))
}

/// Mean accumulated alpha below which a sweep frame draws a warning.
const LOW_COVERAGE: f64 = 0.5;

fn cmd_sweep(a: SweepArgs) -> anyhow::Result<i32> {
    let (from, to, count) = parse_path_spec(&a.path)?;
    let mpi = io::load_mpi(&a.mpi)?;
    io::create_dir(&a.out)?;
    for i in 0..count {
        let t = i as f64 / (count - 1) as f64;
        let cam = mpi.ref_camera().with_center(from + (to - from) * t);
        let r = render_view(&mpi, &cam)?;
        let cover = r.accumulated_alpha.data().iter().map(|&v| v as f64).sum::<f64>() / r.accumulated_alpha.pixel_count() as f64;
        if cover < LOW_COVERAGE {
            eprintln!("warning: frame {i} has mean accumulated alpha {cover:.3}");
        }
        io::write_image(&a.out.join(frame_name(i, count)), &r.image, false)?;
    }
    println!("rendered {count} frames");
    Ok(0)
}

/// Cameras symmetric about the pair's midpoint with the baseline scaled by
/// `factor`; each keeps its source orientation and intrinsics.
pub fn magnified_cameras(left: &Camera, right: &Camera, factor: f64) -> anyhow::Result<(Camera, Camera)> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::InvalidConfig(format!("magnification factor must be positive, got {factor}")).into());
    }
    let mid = (left.center() + right.center()) / 2.0;
    let half = (right.center() - left.center()) / 2.0 * factor;
    Ok((left.with_center(mid - half), right.with_center(mid + half)))
}

/// Red from the left view's luma, green and blue from the right's.
pub fn anaglyph(left: &Image, right: &Image) -> anyhow::Result<Image> {
    if !left.same_shape(right) {
        return Err(Error::ShapeMismatch("anaglyph views differ in size".into()).into());
    }
    let (l, r) = (left.luma(), right.luma());
    Ok(Image::from_fn(left.width(), left.height(), 3, |c, x, y| {
        if c == 0 {
            l.get(0, x, y)
        } else {
            r.get(0, x, y)
        }
    }))
}

fn cmd_magnify(a: MagnifyArgs) -> anyhow::Result<i32> {
    let (cfg, variants) = resolve_config(&a.flags)?;
    let pair = load_pair(&a.pair, &[])?;
    let (cl, cr) = magnified_cameras(&pair.left.1, &pair.right.1, a.factor)?;
    let mpi = match &a.mpi {
        Some(dir) => io::load_mpi(dir)?,
        None => {
            let cfg = FitConfig {
                variant: variants[0],
                ..cfg
            };
            let (mpi, report) = fit_pair(&pair, &cfg)?;
            io::save_mpi(&a.out.join("mpi"), &mpi)?;
            write_report(&a.out.join("mpi"), &report, &cfg)?;
            mpi
        }
    };
    io::create_dir(&a.out)?;
    let left = render_view(&mpi, &cl)?.image;
    let right = render_view(&mpi, &cr)?.image;
    io::write_image(&a.out.join("left.png"), &left, false)?;
    io::write_image(&a.out.join("right.png"), &right, false)?;
    io::write_image(&a.out.join("anaglyph.png"), &anaglyph(&left, &right)?, false)?;
    let baseline = (pair.right.1.center() - pair.left.1.center()).norm();
    println!("baseline {:.6} -> {:.6}", baseline, baseline * a.factor);
    Ok(0)
}

fn image_files(dir: &Path) -> anyhow::Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })? {
        let path = entry.with_context(|| format!("reading {}", dir.display()))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "ppm")) {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                names.push(name.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<i32> {
    let rendered = image_files(&a.rendered)?;
    let truth = image_files(&a.truth)?;
    if rendered.is_empty() {
        bail!("{} contains no images", a.rendered.display());
    }
    if rendered != truth {
        bail!(
            "file names differ between {} and {}",
            a.rendered.display(),
            a.truth.display()
        );
    }
    let scene = a
        .truth
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut rows = Vec::with_capacity(rendered.len());
    for name in &rendered {
        let p = io::read_image(&a.rendered.join(name))?;
        let t = io::read_image(&a.truth.join(name))?;
        rows.push(metrics::evaluate(&scene, name, &p, &t)?);
    }
    let json = serde_json::to_string_pretty(&MetricReport::from_rows(rows))?;
    match &a.out {
        Some(path) => io::write_atomic(path, json.as_bytes())?,
        None => println!("{json}"),
    }
    Ok(0)
}

fn cmd_normalize(a: NormalizeArgs) -> anyhow::Result<i32> {
    let mut seq = load_sequence(&a.sequence)?;
    seq.points = dataset::parse_points(&io::read_text(&a.points)?, &a.points)?;
    let factor = dataset::normalization_factor(&seq)?;
    let norm = dataset::rescale(&seq, factor);
    io::write_atomic(&a.out, dataset::write_sequence(&norm)?.as_bytes())?;
    if let Some(p) = &a.out_points {
        io::write_atomic(p, dataset::write_points(&norm.points).as_bytes())?;
    }
    println!("scale factor {}", dataset::sig9(factor));
    Ok(0)
}

fn cmd_filter(a: FilterArgs) -> anyhow::Result<i32> {
    let seq = load_sequence(&a.sequence)?;
    let smooth = dataset::smooth_prefix(&seq)?;
    match dataset::trim_and_filter(&smooth, a.trim, a.min_len) {
        Some(clip) => {
            io::write_atomic(&a.out, dataset::write_sequence(&clip)?.as_bytes())?;
            println!("kept {} of {} frames", clip.len(), seq.len());
        }
        None => println!(
            "discarded: {} smooth frames leave fewer than {} after trimming",
            smooth.len(),
            a.min_len
        ),
    }
    Ok(0)
}

fn cmd_sample(a: SampleArgs) -> anyhow::Result<i32> {
    let seq = load_sequence(&a.sequence)?;
    for i in 0..a.count {
        let t = dataset::sample_triplet(&seq, a.seed.wrapping_add(i as u64))?;
        println!("{}", serde_json::to_string(&t)?);
    }
    Ok(0)
}

fn cmd_selfcheck() -> anyhow::Result<i32> {
    let outcomes = check::run_selfcheck()?;
    for o in &outcomes {
        println!("{}", o.line());
    }
    Ok(if outcomes.iter().all(|o| o.passed) { 0 } else { EXIT_NUMERIC })
}
