use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use asgfit::io::{load_env, save_env, ParamsFile};
use asgfit::loss::LossWeights;
use asgfit::metrics::{frame_metrics, jitter, FrameMetrics};
use asgfit::optim::{fit_sequence_with, FitConfig, Progress};
use asgfit::render::{render_balls, stack_rows, tonemap, BallSettings, Lighting};
use asgfit::resample::resample;
use asgfit::sh::DiffuseOperator;
use asgfit::synth::{render_mixture, SkyScene};
use asgfit::{EnvMap, Error, GridDims, Result, RgbImage, SampleGrid};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::args::{
    Command, FitArgs, MetricsArgs, Preset, ReconstructArgs, RenderBallsArgs, ReplayArgs, Scene, StackRowsArgs,
    SynthArgs,
};
use crate::manifest::{sibling, write_atomic, ManifestBuilder, RunManifest};

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::Fit(a) => fit(a, command).map(|_| ()),
        Command::Reconstruct(a) => reconstruct(a, command),
        Command::Metrics(a) => metrics(a, command).map(|_| ()),
        Command::RenderBalls(a) => render_balls_cmd(a, command),
        Command::StackRows(a) => stack_rows_cmd(a, command),
        Command::Synth(a) => synth(a, command).map(|_| ()),
        Command::Replay(a) => replay(a),
    }
}

/// Files matching `pattern`, in lexicographic order. A pattern without
/// wildcards names a single file.
pub fn discover(pattern: &str) -> Result<Vec<PathBuf>> {
    let paths = glob::glob(pattern).map_err(|e| Error::Usage(format!("bad input pattern {pattern:?}: {e}")))?;
    let mut out = paths
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Io(e.into()))?;
    out.retain(|p| p.is_file());
    out.sort();
    if out.is_empty() {
        return Err(Error::Usage(format!("no files match {pattern:?}")));
    }
    Ok(out)
}

fn manifest_path(explicit: &Option<PathBuf>, out: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| sibling(out, "manifest.json"))
}

pub fn fit_config(args: &FitArgs) -> Result<FitConfig> {
    let mut cfg = match args.preset {
        Preset::Full => FitConfig {
            num_asgs: args.num_asgs,
            ..FitConfig::default()
        },
        Preset::Desk => FitConfig::desk(args.num_asgs),
    };
    let d = LossWeights::default();
    cfg.weights = LossWeights {
        alpha: args.alpha.unwrap_or(d.alpha),
        beta: if args.no_diffuse {
            0.0
        } else {
            args.beta.unwrap_or(d.beta)
        },
        gamma: args.gamma.unwrap_or(d.gamma),
    };
    if args.no_diffuse && args.beta.is_some_and(|b| b != 0.0) {
        return Err(Error::Usage("--no-diffuse conflicts with a nonzero --beta".into()));
    }
    cfg.grid_height = args.grid_height.unwrap_or(cfg.grid_height);
    cfg.epochs_first = args.epochs_first.unwrap_or(cfg.epochs_first);
    cfg.epochs_rest = args.epochs_rest.unwrap_or(cfg.epochs_rest);
    cfg.learning_rate = args.learning_rate.unwrap_or(cfg.learning_rate);
    cfg.loss = args.loss.into();
    cfg.isotropic = args.isotropic;
    cfg.seed = args.seed;
    cfg.deterministic = args.deterministic;
    cfg.validate()?;
    Ok(cfg)
}

fn load_frames(paths: &[PathBuf], manifest: &mut ManifestBuilder) -> Result<Vec<EnvMap>> {
    paths
        .iter()
        .map(|p| {
            manifest.input(p)?;
            load_env(p)
        })
        .collect()
}

/// Outcome of a completed fit.
pub struct FitOutcome {
    pub params: ParamsFile,
    pub manifest: RunManifest,
}

pub fn fit(args: &FitArgs, invocation: &Command) -> Result<FitOutcome> {
    let cfg = fit_config(args)?;
    let paths = discover(&args.input)?;
    let mut manifest = ManifestBuilder::new(invocation);
    manifest.config(&cfg)?;
    let frames = load_frames(&paths, &mut manifest)?;
    info!(
        "fitting {} frame(s) with {} lobes on a {} grid",
        frames.len(),
        cfg.num_asgs,
        cfg.grid_dims()
    );

    let csv_path = args.loss_csv.clone().unwrap_or_else(|| sibling(&args.out, "loss.csv"));
    let mut csv = BufWriter::new(File::create(&csv_path)?);
    writeln!(csv, "frame,epoch,total,recon,diffuse,temporal")?;
    let mut csv_error = None;
    let log_every = args.log_every.max(1);
    let mut observer = |p: &Progress| {
        let l = &p.loss;
        if csv_error.is_none() {
            if let Err(e) = writeln!(
                csv,
                "{},{},{},{},{},{}",
                p.frame, p.epoch, l.total, l.reconstruction, l.diffuse, l.temporal
            ) {
                csv_error = Some(e);
            }
        }
        if p.epoch.is_multiple_of(log_every) || p.epoch + 1 == p.epochs {
            info!(
                "frame {} epoch {}/{}: total {:.6} (recon {:.6}, diffuse {:.6}, temporal {:.6})",
                p.frame, p.epoch, p.epochs, l.total, l.reconstruction, l.diffuse, l.temporal
            );
        }
    };
    let seq = fit_sequence_with(&frames, &cfg, &mut observer)?;
    if let Some(e) = csv_error {
        return Err(e.into());
    }
    csv.flush()?;

    let params = ParamsFile::from_mixtures(&seq.mixtures(), Some(cfg))?;
    write_atomic(&args.out, params.to_json()?.as_bytes())?;
    manifest.output(&args.out);
    manifest.output(&csv_path);
    manifest.frames(seq.frames.iter().map(|f| f.final_loss).collect());
    let reseeds: usize = seq.frames.iter().map(|f| f.reseeds).sum();
    if reseeds > 0 {
        warn!("{reseeds} degenerate lobe frame(s) were re-seeded during the fit");
    }
    if let Some(f) = &seq.failure {
        manifest.status(format!("failed at frame {}: {}", f.frame, f.error));
    }
    let manifest = manifest.finish(&manifest_path(&args.manifest, &args.out))?;
    match seq.failure {
        Some(f) => {
            warn!(
                "frame {} failed; {} fitted frame(s) were saved",
                f.frame,
                seq.frames.len()
            );
            Err(f.error)
        }
        None => Ok(FitOutcome { params, manifest }),
    }
}

fn latlong(width: usize) -> Result<GridDims> {
    if width < 2 || !width.is_multiple_of(2) {
        return Err(Error::Usage(format!("width must be even and at least 2, got {width}")));
    }
    Ok(GridDims::new(width, width / 2))
}

fn reconstruct(args: &ReconstructArgs, invocation: &Command) -> Result<()> {
    let mut manifest = ManifestBuilder::new(invocation);
    manifest.input(&args.params)?;
    let params = ParamsFile::load(&args.params)?;
    let env = render_mixture(&params.mixture(args.frame)?, latlong(args.width)?)?;
    save_env(&args.out, &env)?;
    manifest.output(&args.out);
    manifest.finish(&manifest_path(&args.manifest, &args.out))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub path: PathBuf,
    #[serde(flatten)]
    pub metrics: FrameMetrics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub grid: GridDims,
    pub frames: Vec<FrameRecord>,
    pub jitter: f64,
}

pub fn metrics(args: &MetricsArgs, invocation: &Command) -> Result<MetricsReport> {
    let mut manifest = ManifestBuilder::new(invocation);
    manifest.input(&args.params)?;
    let params = ParamsFile::load(&args.params)?;
    let paths = discover(&args.input)?;
    if paths.len() != params.frames.len() {
        return Err(Error::dims(
            format!("{} frames in {}", params.frames.len(), args.params.display()),
            format!("{} input files", paths.len()),
        ));
    }
    let frames = load_frames(&paths, &mut manifest)?;
    let height = args
        .grid_height
        .or_else(|| params.config.as_ref().map(|c| c.grid_height))
        .unwrap_or(256);
    let grid = SampleGrid::with_height(height)?;
    let op = DiffuseOperator::new(&grid);
    let mixtures = params.mixtures();
    let records = frames
        .iter()
        .zip(&mixtures)
        .zip(&paths)
        .enumerate()
        .map(|(frame, ((gt, m), path))| {
            let gt = resample(gt, grid.dims())?;
            let pred = m.realize()?.eval_grid(&grid);
            Ok(FrameRecord {
                frame,
                path: path.clone(),
                metrics: frame_metrics(&pred, gt.image(), &op)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = MetricsReport {
        grid: grid.dims(),
        frames: records,
        jitter: jitter(&mixtures)?,
    };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    write_atomic(&args.report, text.as_bytes())?;
    manifest.output(&args.report);
    manifest.finish(&manifest_path(&args.manifest, &args.report))?;
    Ok(report)
}

pub fn encode_png(image: &RgbImage, exposure: f64) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, image.width() as u32, image.height() as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| Error::Io(std::io::Error::other(e));
    let mut writer = enc.write_header().map_err(to_io)?;
    writer.write_image_data(&tonemap(image, exposure)).map_err(to_io)?;
    writer.finish().map_err(to_io)?;
    Ok(out)
}

fn check_exposure(exposure: f64) -> Result<()> {
    if exposure.is_finite() && exposure > 0.0 {
        Ok(())
    } else {
        Err(Error::Usage(format!("exposure must be positive, got {exposure}")))
    }
}

fn is_params(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn render_balls_cmd(args: &RenderBallsArgs, invocation: &Command) -> Result<()> {
    check_exposure(args.exposure)?;
    let mut manifest = ManifestBuilder::new(invocation);
    manifest.input(&args.source)?;
    let light = if is_params(&args.source) {
        Lighting::from_mixture(&ParamsFile::load(&args.source)?.mixture(args.frame)?)?
    } else {
        Lighting::Env(load_env(&args.source)?)
    };
    let settings = BallSettings {
        size: args.size,
        samples: args.samples,
        seed: args.seed,
    };
    let image = render_balls(&light, &args.roughness, &settings)?;
    write_atomic(&args.out, &encode_png(&image, args.exposure)?)?;
    manifest.output(&args.out);
    manifest.exposure(args.exposure);
    manifest.finish(&manifest_path(&args.manifest, &args.out))?;
    Ok(())
}

fn stack_rows_cmd(args: &StackRowsArgs, invocation: &Command) -> Result<()> {
    check_exposure(args.exposure)?;
    let mut manifest = ManifestBuilder::new(invocation);
    let as_path = Path::new(&args.input);
    let frames: Vec<RgbImage> = if is_params(as_path) && as_path.is_file() {
        manifest.input(as_path)?;
        let dims = latlong(args.width)?;
        ParamsFile::load(as_path)?
            .mixtures()
            .iter()
            .map(|m| render_mixture(m, dims).map(EnvMap::into_image))
            .collect::<Result<_>>()?
    } else {
        load_frames(&discover(&args.input)?, &mut manifest)?
            .into_iter()
            .map(EnvMap::into_image)
            .collect()
    };
    let stack = stack_rows(&frames, args.row)?;
    write_atomic(&args.out, &encode_png(&stack, args.exposure)?)?;
    manifest.output(&args.out);
    manifest.exposure(args.exposure);
    manifest.finish(&manifest_path(&args.manifest, &args.out))?;
    Ok(())
}

pub fn scene(scene: Scene) -> SkyScene {
    match scene {
        Scene::Studio => SkyScene::studio(),
        Scene::Sunny => SkyScene::sunny(),
    }
}

/// Supersampling used for written procedural frames.
pub const SYNTH_SUPERSAMPLING: usize = 4;

fn numbered(path: &Path, index: usize) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}_{index:03}.{ext}"))
}

pub fn synth(args: &SynthArgs, invocation: &Command) -> Result<Vec<PathBuf>> {
    if args.frames == 0 {
        return Err(Error::Usage("--frames must be positive".into()));
    }
    let mut manifest = ManifestBuilder::new(invocation);
    let base = scene(args.scene);
    let dims = GridDims::with_height(args.height);
    let mut written = Vec::with_capacity(args.frames);
    for t in 0..args.frames {
        let path = if args.frames == 1 {
            args.out.clone()
        } else {
            numbered(&args.out, t)
        };
        let env = base
            .rotated_z((args.step_deg * t as f64).to_radians())
            .render(dims, SYNTH_SUPERSAMPLING)?;
        save_env(&path, &env)?;
        manifest.output(&path);
        written.push(path);
    }
    manifest.finish(&manifest_path(&args.manifest, &args.out))?;
    Ok(written)
}

fn replay(args: &ReplayArgs) -> Result<()> {
    let recorded = RunManifest::load(&args.manifest)?;
    if matches!(recorded.invocation, Command::Replay(_)) {
        return Err(Error::Usage("a replay manifest cannot be replayed".into()));
    }
    info!("replaying {}", recorded.argv.join(" "));
    run(&recorded.invocation)
}

/// Process exit status for a failed command: 2 usage, 3 input, 4 numeric.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) => 2,
        Error::Parse { .. }
        | Error::Io(_)
        | Error::Json(_)
        | Error::InvalidPixel { .. }
        | Error::DimensionMismatch { .. } => 3,
        Error::NonFinite(_) | Error::DegenerateFrame(_) => 4,
    }
}
