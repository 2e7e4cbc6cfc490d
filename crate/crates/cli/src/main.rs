mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};

use topview_core::analytics::{aggregate_scenes, detect_violations, occupancy, CameraRegistry, CameraResult, ViolationConfig};
use topview_core::bev::{export_geojson, export_tokens, parse_tokens_str, CalibrationParams, GeoJsonMode};
use topview_core::pipeline::{load_calibration, load_detections, load_scene_meta, run_pipeline, SceneLoadError};
use topview_core::synth::{emit_scenario, Scenario};
use topview_core::vp::{
    estimate_vp_ransac, load_segments, load_vp_sidecar, logcosh_error_pixels, vp_sidecar_json, RansacConfig, VpError,
};
use topview_core::{ImageSize, PipelineError, VanishingPoint};

use config::{parse_image_size, FileConfig};

#[derive(Parser)]
#[command(name = "topview", version, about = "Bird's-eye-view maps of road users from street-camera detections")]
struct Cli {
    /// TOML file with one table per subcommand plus [pipeline]; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a vanishing point from line segments, or check a sidecar file.
    Vp(VpArgs),
    /// Project detections to BEV token streams.
    Project(ProjectArgs),
    /// Distance violations, occupancy and camera aggregation over token files.
    Analyze(AnalyzeArgs),
    /// Generate a synthetic scene with known ground truth.
    Synth(SynthArgs),
    /// Serve scenes over HTTP for interactive calibration.
    Serve(ServeArgs),
}

#[derive(Args)]
struct VpArgs {
    /// JSON array of segments `{"x1","y1","x2","y2"[,"weight"]}`.
    #[arg(long, conflicts_with = "sidecar", required_unless_present = "sidecar")]
    segments: Option<PathBuf>,
    /// Existing VP sidecar `{"x","y"[,"confidence"]}`; echoed after validation.
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// WIDTHxHEIGHT, needed to score against --truth.
    #[arg(long)]
    image_size: Option<String>,
    /// Ground-truth sidecar to score the result with the logcosh metric.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Inlier distance, pixels.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    min_inlier_ratio: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the VP as a sidecar file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProjectArgs {
    /// Scene directory with detections.jsonl, vp.json, scene.json and optionally calibration.json.
    /// Explicit flags override its files.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    detections: Option<PathBuf>,
    #[arg(long)]
    vp: Option<PathBuf>,
    /// WIDTHxHEIGHT of the source video.
    #[arg(long)]
    image_size: Option<String>,
    /// Calibration JSON; defaults to the identity calibration.
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Frame rate used for timestamps when detections carry none.
    #[arg(long)]
    fps: Option<f64>,
    /// Keep only every (fps / sample-fps)-th frame.
    #[arg(long)]
    sample_fps: Option<f64>,
    #[arg(long)]
    out_tokens: PathBuf,
    #[arg(long)]
    out_geojson: Option<PathBuf>,
    /// `points` or `lines`.
    #[arg(long)]
    geojson_mode: Option<String>,
    /// Violation threshold for the summary line, metres.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Token files; each is one camera, identified by its file stem.
    #[arg(long, num_args = 1.., required = true)]
    tokens: Vec<PathBuf>,
    /// Metres.
    #[arg(long)]
    threshold: Option<f64>,
    /// Minimum run length in frames.
    #[arg(long)]
    min_duration: Option<usize>,
    /// Bucket width in frames for per-interval counts.
    #[arg(long)]
    interval: Option<u64>,
    /// Occupancy cell size in metres; omitted means no occupancy grid.
    #[arg(long)]
    grid: Option<f64>,
    /// Calibration supplying metres per BEV unit.
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Camera registry CSV `camera_id,lat,lon,heading`.
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the scenario's bbox jitter, pixels.
    #[arg(long)]
    bbox_sigma: Option<f64>,
    /// Overrides the scenario's detection dropout rate.
    #[arg(long)]
    dropout: Option<f64>,
    /// Emit detections without track ids.
    #[arg(long)]
    remove_ids: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    host: Option<String>,
    #[arg(long)]
    scene_dir: Option<PathBuf>,
}

/// An error with the process exit code it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

const ESTIMATION: u8 = 2;
const SCHEMA: u8 = 3;
const REFERENCE: u8 = 4;

fn fail(code: u8, err: impl Into<anyhow::Error>) -> Failure {
    Failure { code, err: err.into() }
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        Failure { code: 1, err }
    }
}

type CmdResult = Result<(), Failure>;

fn vp_failure(e: VpError) -> Failure {
    let code = match e {
        VpError::ParseError { .. } | VpError::InvalidSegment { .. } => SCHEMA,
        VpError::Io { .. } => 1,
        _ => ESTIMATION,
    };
    fail(code, e)
}

fn load_failure(e: SceneLoadError) -> Failure {
    match e {
        SceneLoadError::Vp(v) => vp_failure(v),
        SceneLoadError::Io { .. } => fail(1, e),
        SceneLoadError::Detections { .. } | SceneLoadError::Schema { .. } => fail(SCHEMA, e),
    }
}

fn image_size(flag: Option<&str>, file: Option<&str>) -> Result<Option<(u32, u32)>, Failure> {
    flag.or(file)
        .map(parse_image_size)
        .transpose()
        .map_err(|m| fail(SCHEMA, anyhow!(m)))
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_vp(a: VpArgs, cfg: &FileConfig) -> CmdResult {
    let size = image_size(a.image_size.as_deref(), cfg.vp.image_size.as_deref())?;
    let (vp, report) = if let Some(path) = &a.sidecar {
        let vp = load_vp_sidecar(path).map_err(vp_failure)?;
        (vp, serde_json::to_value(vp).expect("vp serializes"))
    } else {
        let path = a.segments.as_ref().expect("clap requires one source");
        let segs = load_segments(path).map_err(vp_failure)?;
        let defaults = RansacConfig::default();
        let rc = RansacConfig {
            iterations: a.iterations.or(cfg.vp.iterations).unwrap_or(defaults.iterations),
            threshold: a.threshold.or(cfg.vp.threshold).unwrap_or(defaults.threshold),
            min_inlier_ratio: a.min_inlier_ratio.or(cfg.vp.min_inlier_ratio).unwrap_or(defaults.min_inlier_ratio),
            seed: a.seed.or(cfg.vp.seed).unwrap_or(defaults.seed),
        };
        let est = estimate_vp_ransac(&segs, &rc).map_err(vp_failure)?;
        let report = json!({
            "x": est.vp.x,
            "y": est.vp.y,
            "confidence": est.vp.confidence,
            "inliers": est.inlier_count,
            "segments": segs.len(),
            "residual": est.residual,
        });
        (est.vp, report)
    };
    let mut report = report;
    if let Some(truth) = &a.truth {
        let (w, h) = size.ok_or_else(|| fail(SCHEMA, anyhow!("--truth needs --image-size")))?;
        let t = load_vp_sidecar(truth).map_err(vp_failure)?;
        report["logcosh"] = serde_json::to_value(logcosh_error_pixels(&vp, &t, w as f64, h as f64)).unwrap();
    }
    if let Some((_, h)) = size {
        if vp.y >= h as f64 {
            log::warn!("vanishing point y = {} lies below the image", vp.y);
        }
    }
    if let Some(out) = &a.out {
        write_file(out, &(vp_sidecar_json(&vp) + "\n"))?;
    }
    println!("{report}");
    Ok(())
}

fn cmd_project(a: ProjectArgs, cfg: &FileConfig) -> CmdResult {
    let from_scene = |name: &str| a.scene.as_ref().map(|d| d.join(name));
    let det_path = a
        .detections
        .clone()
        .or_else(|| from_scene("detections.jsonl"))
        .ok_or_else(|| fail(SCHEMA, anyhow!("--detections or --scene is required")))?;
    let vp_path = a
        .vp
        .clone()
        .or_else(|| from_scene("vp.json"))
        .ok_or_else(|| fail(SCHEMA, anyhow!("--vp or --scene is required")))?;
    let meta = match from_scene("scene.json") {
        Some(p) => Some(load_scene_meta(&p).map_err(load_failure)?),
        None => None,
    };
    let size = match image_size(a.image_size.as_deref(), cfg.project.image_size.as_deref())? {
        Some(s) => s,
        None => meta
            .map(|m| (m.image_width, m.image_height))
            .ok_or_else(|| fail(SCHEMA, anyhow!("--image-size is required")))?,
    };
    let fps = a.fps.or(cfg.project.fps).or(meta.map(|m| m.fps));
    let cal_path = a.calib.clone().or_else(|| from_scene("calibration.json").filter(|p| p.exists()));
    let cal = match &cal_path {
        Some(p) => load_calibration(p).map_err(load_failure)?,
        None => CalibrationParams::default(),
    };

    let vp: VanishingPoint = load_vp_sidecar(&vp_path).map_err(vp_failure)?;
    let mut detections = load_detections(&det_path).map_err(load_failure)?;
    if let Some(sample) = a.sample_fps.or(cfg.project.sample_fps) {
        let fps = fps.ok_or_else(|| fail(SCHEMA, anyhow!("--sample-fps needs --fps")))?;
        if !(sample > 0.0) {
            return Err(fail(SCHEMA, anyhow!("--sample-fps must be positive")));
        }
        let step = (fps / sample).round().max(1.0) as u64;
        detections.retain(|d| d.frame % step == 0);
    }

    let pipeline = cfg.pipeline();
    let image = ImageSize {
        width: size.0 as f64,
        height: size.1 as f64,
    };
    let out = run_pipeline(&detections, &vp, image, &cal, fps, &pipeline).map_err(|e| match e {
        PipelineError::MissingTimebase { .. } => fail(SCHEMA, e),
        PipelineError::Bev(_) => fail(SCHEMA, e),
        PipelineError::Geometry(_) => fail(ESTIMATION, e),
    })?;

    write_file(&a.out_tokens, &export_tokens(&out.streams))?;
    if let Some(path) = &a.out_geojson {
        let mode = match a.geojson_mode.as_deref().or(cfg.project.geojson_mode.as_deref()) {
            None | Some("points") => GeoJsonMode::Points,
            Some("lines") => GeoJsonMode::LineStrings,
            Some(m) => return Err(fail(SCHEMA, anyhow!("unknown geojson mode `{m}`"))),
        };
        let doc = export_geojson(&out.streams, mode).map_err(|e| fail(SCHEMA, e))?;
        write_file(path, &(serde_json::to_string(&doc).expect("geojson serializes") + "\n"))?;
    }

    let threshold = a.threshold.or(cfg.project.threshold).unwrap_or(2.0);
    let report = detect_violations(&out.streams, &cal, &ViolationConfig { threshold_m: threshold, ..Default::default() });
    let states: usize = out.streams.iter().map(|s| s.states.len()).sum();
    if out.above_horizon > 0 {
        eprintln!("warning: {} samples at or above the horizon were dropped", out.above_horizon);
    }
    eprintln!(
        "{} tracks, {states} states, {} dropped above horizon, {} violations below {threshold} m",
        out.streams.len(),
        out.above_horizon,
        report.count
    );
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs, cfg: &FileConfig) -> CmdResult {
    let c = &cfg.analyze;
    let vcfg = ViolationConfig {
        threshold_m: a.threshold.or(c.threshold).unwrap_or(2.0),
        min_duration: a.min_duration.or(c.min_duration).unwrap_or(1),
        interval_frames: a.interval.or(c.interval),
    };
    let cal = match a.calib.clone().or(c.calib.as_ref().map(PathBuf::from)) {
        Some(p) => load_calibration(&p).map_err(load_failure)?,
        None => CalibrationParams::default(),
    };
    let cell = a.grid.or(c.grid);

    // Files are processed in parallel; results keep the input order.
    let results: Vec<Result<(String, Value, usize), Failure>> = a
        .tokens
        .par_iter()
        .map(|path| {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(Failure::from)?;
            let streams = parse_tokens_str(&text)
                .map_err(|e| fail(SCHEMA, anyhow!("{}: {e}", path.display())))?;
            let report = detect_violations(&streams, &cal, &vcfg);
            let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let mut entry = json!({
                "camera_id": id,
                "file": path.display().to_string(),
                "violations": report,
            });
            if let Some(cell) = cell {
                let grid = occupancy(&streams, &cal, cell).map_err(|e| fail(SCHEMA, e))?;
                entry["occupancy"] = serde_json::to_value(grid).expect("grid serializes");
            }
            Ok((id, entry, report.count))
        })
        .collect();
    let mut cameras = Vec::new();
    let mut per_camera = Vec::new();
    for r in results {
        let (id, entry, count) = r?;
        per_camera.push(CameraResult {
            camera_id: id,
            violation_count: count,
        });
        cameras.push(entry);
    }
    let total: usize = per_camera.iter().map(|c| c.violation_count).sum();
    let mut doc = json!({
        "threshold_m": vcfg.threshold_m,
        "min_duration": vcfg.min_duration,
        "cameras": cameras,
        "total_violations": total,
    });
    if let Some(reg) = a.registry.clone().or(c.registry.as_ref().map(PathBuf::from)) {
        let file = fs::File::open(&reg).map_err(|e| fail(REFERENCE, anyhow!("{}: {e}", reg.display())))?;
        let registry = CameraRegistry::from_csv(file).map_err(|e| fail(REFERENCE, e))?;
        doc["aggregate"] = aggregate_scenes(&per_camera, &registry).map_err(|e| fail(REFERENCE, e))?;
    }
    write_file(&a.out, &(serde_json::to_string_pretty(&doc).expect("report serializes") + "\n"))?;
    eprintln!("{} files, {total} violations", a.tokens.len());
    Ok(())
}

fn cmd_synth(a: SynthArgs, cfg: &FileConfig) -> CmdResult {
    let text = fs::read_to_string(&a.scenario)
        .with_context(|| format!("reading {}", a.scenario.display()))
        .map_err(Failure::from)?;
    let mut scenario =
        Scenario::from_json(&text).map_err(|e| fail(SCHEMA, anyhow!("{}: {e}", a.scenario.display())))?;
    let c = &cfg.synth;
    if let Some(s) = a.bbox_sigma.or(c.bbox_sigma) {
        scenario.noise.bbox_sigma = s;
    }
    if let Some(d) = a.dropout.or(c.dropout) {
        scenario.noise.dropout = d;
    }
    if a.remove_ids || c.remove_ids.unwrap_or(false) {
        scenario.noise.remove_ids = true;
    }
    let out = emit_scenario(&scenario, a.seed.or(c.seed).unwrap_or(0)).map_err(|e| fail(SCHEMA, e))?;
    out.write_to_dir(&a.out_dir)
        .with_context(|| format!("writing {}", a.out_dir.display()))
        .map_err(Failure::from)?;
    eprintln!(
        "{} detections, {} ground-truth samples written to {}",
        out.detections.len(),
        out.ground_truth.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn cmd_serve(a: ServeArgs, cfg: &FileConfig) -> CmdResult {
    let c = &cfg.serve;
    let dir = a
        .scene_dir
        .or(c.scene_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| fail(SCHEMA, anyhow!("--scene-dir is required")))?;
    let host = a.host.or(c.host.clone()).unwrap_or_else(|| "127.0.0.1".into());
    let port = a.port.or(c.port).unwrap_or(8080);
    let addr: std::net::SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| fail(SCHEMA, anyhow!("bad address {host}:{port}: {e}")))?;
    let state = topview_service::AppState::load(&dir, cfg.pipeline()).map_err(|e| fail(SCHEMA, e))?;
    eprintln!("serving {} scenes from {} on http://{addr}", state.scenes.len(), dir.display());
    let rt = tokio::runtime::Runtime::new().context("starting runtime").map_err(Failure::from)?;
    rt.block_on(topview_service::serve(addr, std::sync::Arc::new(state)))
        .context("server stopped")
        .map_err(Failure::from)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = FileConfig::load(cli.config.as_deref())
        .map_err(|e| fail(SCHEMA, e))
        .and_then(|cfg| match cli.command {
            Command::Vp(a) => cmd_vp(a, &cfg),
            Command::Project(a) => cmd_project(a, &cfg),
            Command::Analyze(a) => cmd_analyze(a, &cfg),
            Command::Synth(a) => cmd_synth(a, &cfg),
            Command::Serve(a) => cmd_serve(a, &cfg),
        });
    match result {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
