//! `splatcodec` command-line front end.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use splatcodec::config::TrainConfig;
use splatcodec::eval::{bjontegaard, rd_report, view_quality, RdCurve, RdPoint};
use splatcodec::model::{read_raw_frame, write_raw_frame, Camera, GaussianFrameSet};
use splatcodec::pipeline::{decode_stream, Encoder, EncoderState, View};
use splatcodec::render::{render, Image};
use splatcodec::stream::{read_stream, write_stream, FrameBitstream};
use splatcodec::synth::{frame_dir_name, MotionKind, SynthParams, SyntheticScene};
use splatcodec::Error;

const SEED_VAR: &str = "FOURDGC_SEED";

#[derive(Parser)]
#[command(name = "splatcodec", version, about = "Codec for streamable dynamic 3D Gaussian splat scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene with ground truth and rendered views.
    Synth(SynthArgs),
    /// Train and encode frame 1, starting a new stream.
    Keyframe(KeyframeArgs),
    /// Encode further frames and append them to a stream.
    Stream(StreamArgs),
    /// Decode one frame of a stream to `.4dgs`.
    Decode(DecodeArgs),
    /// Render a `.4dgs` frame to PPM.
    Render(RenderArgs),
    /// Per-frame PSNR, SSIM and size of a stream against a synthetic scene.
    Eval(EvalArgs),
    /// Encode a scene at several rates and write an RD report.
    Rdcurve(RdcurveArgs),
}

/// Training configuration shared by the encoding commands. Defaults are
/// those of `TrainConfig`; a file is applied first, then the flags.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed; falls back to FOURDGC_SEED, then to the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Override one configuration key, e.g. `--set lr.grid=0.005`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self, lambda1: Option<f64>) -> Result<TrainConfig, CliError> {
        let mut cfg = TrainConfig::default();
        if let Some(p) = &self.config {
            cfg.apply_file(p)?;
        }
        for o in &self.overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| CliError::usage(format!("`--set {o}` is not KEY=VALUE")))?;
            cfg.set(k.trim(), v)?;
        }
        if let Some(l) = lambda1 {
            cfg.lambda1 = l;
        }
        if let Some(seed) = resolve_seed(self.seed)? {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::usage(format!("{SEED_VAR}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 5)]
    frames: usize,
    #[arg(long, default_value_t = 8)]
    gaussians: usize,
    #[arg(long, default_value_t = 4)]
    views: usize,
    /// translate, rotate, mixed or birth.
    #[arg(long, default_value = "mixed")]
    kind: MotionKind,
}

#[derive(Args)]
struct KeyframeArgs {
    /// Directory holding `view_KK.ppm` training images.
    #[arg(long)]
    images: PathBuf,
    /// Camera list JSON, one entry per view.
    #[arg(long)]
    cameras: PathBuf,
    /// Starting primitives (`.4dgs`).
    #[arg(long)]
    init: PathBuf,
    #[arg(long)]
    lambda1: Option<f64>,
    /// Stream to create.
    #[arg(long)]
    out: PathBuf,
    /// Where to write the encoder state [default: <out>.state.json].
    #[arg(long)]
    state: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct StreamArgs {
    /// Stream to extend in place.
    #[arg(long = "in")]
    input: PathBuf,
    /// Encoder state written by the previous `keyframe` or `stream` run.
    #[arg(long)]
    prev_state: PathBuf,
    /// Frame directories with `view_KK.ppm`, in order.
    #[arg(long, num_args = 1.., required = true)]
    frames: Vec<PathBuf>,
    #[arg(long)]
    cameras: PathBuf,
    /// Where to write the new state [default: overwrite --prev-state].
    #[arg(long)]
    state: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// 1-based frame index.
    #[arg(long)]
    frame: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    /// `.4dgs` frame.
    #[arg(long = "in")]
    input: PathBuf,
    /// Camera list JSON.
    #[arg(long)]
    camera: PathBuf,
    /// Entry of the camera list to use.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_rgb, default_value = "0,0,0")]
    background: [f64; 3],
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    stream: PathBuf,
    /// Scene directory written by `synth`.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, value_parser = parse_rgb, default_value = "0,0,0")]
    background: [f64; 3],
}

#[derive(Args)]
struct RdcurveArgs {
    /// Scene directory written by `synth`.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.0003,0.0001,0.00005,0.00001")]
    lambdas: Vec<f64>,
    /// Report CSV; the fitted curves go next to it as `<stem>_fit.csv`.
    #[arg(long, default_value = "rd.csv")]
    out: PathBuf,
    #[arg(long, default_value = "4dgc")]
    label: String,
    /// Also run the sweep without compensation and print BDBR / BD-PSNR.
    #[arg(long)]
    ablate_compensation: bool,
    #[command(flatten)]
    cfg: ConfigArgs,
}

fn parse_rgb(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    v.try_into().map_err(|_| "expected r,g,b".to_string())
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Codec(Error),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Codec(Error::InvalidArgument(_)) => 2,
            CliError::Codec(Error::NonFinite(_) | Error::Diverged(_) | Error::Overflow(_)) => 4,
            CliError::Codec(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Codec(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Codec(Error::Io(e))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Codec(e) => e.fmt(f),
        }
    }
}

fn io_context(path: &Path, e: std::io::Error) -> CliError {
    CliError::Codec(Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| io_context(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| io_context(path, e))
}

fn load_frames(path: &Path) -> Result<Vec<FrameBitstream>, CliError> {
    Ok(read_stream(open(path)?)?)
}

fn save_frames(frames: &[FrameBitstream], path: &Path) -> Result<Vec<usize>, CliError> {
    let sizes = write_stream(frames, create(path)?)?;
    Ok(sizes)
}

fn load_state(path: &Path) -> Result<EncoderState, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_context(path, e))?;
    Ok(serde_json::from_str(&text).map_err(Error::from)?)
}

fn save_state(state: &EncoderState, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string(state).map_err(Error::from)?;
    fs::write(path, text).map_err(|e| io_context(path, e))
}

fn load_cameras(path: &Path) -> Result<Vec<Camera>, CliError> {
    Camera::load_list(path).map_err(|e| match e {
        Error::Io(io) => io_context(path, io),
        other => other.into(),
    })
}

/// `view_KK.ppm` files of a directory, paired in name order with `cameras`.
fn load_views(dir: &Path, cameras: &[Camera]) -> Result<Vec<View>, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_context(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("view_") && name.ends_with(".ppm")
        })
        .collect();
    files.sort();
    if files.len() != cameras.len() {
        return Err(CliError::Codec(Error::Format(format!(
            "{} has {} views for {} cameras",
            dir.display(),
            files.len(),
            cameras.len()
        ))));
    }
    files
        .iter()
        .zip(cameras)
        .map(|(f, c)| Ok(View { camera: c.clone(), image: Image::read_ppm(open(f)?)? }))
        .collect()
}

fn state_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".state.json");
    PathBuf::from(s)
}

fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let seed = resolve_seed(a.seed)?.unwrap_or(TrainConfig::default().seed);
    let scene = SyntheticScene::generate(SynthParams::new(seed, a.frames, a.gaussians, a.views, a.kind))?;
    scene.write_to(&a.out)?;
    println!(
        "wrote {} frames x {} views to {} (birth at frame {})",
        a.frames,
        a.views,
        a.out.display(),
        scene.birth_frame
    );
    Ok(())
}

fn keyframe(a: &KeyframeArgs) -> Result<(), CliError> {
    let cfg = a.cfg.resolve(a.lambda1)?;
    let views = load_views(&a.images, &load_cameras(&a.cameras)?)?;
    let init = read_raw_frame(open(&a.init)?, 1)?;
    let mut enc = Encoder::new(cfg)?;
    let out = enc.encode_keyframe(&init.primitives, &views)?;
    save_frames(std::slice::from_ref(&out.bitstream), &a.out)?;
    save_state(enc.state(), &a.state.clone().unwrap_or_else(|| state_path(&a.out)))?;
    println!("frame 1: {} bytes, {} primitives", out.report.bytes, out.report.primitives);
    Ok(())
}

fn stream(a: &StreamArgs) -> Result<(), CliError> {
    let state = load_state(&a.prev_state)?;
    let mut frames = load_frames(&a.input)?;
    let cameras = load_cameras(&a.cameras)?;
    let mut enc = Encoder::resume(state, &frames)?;
    for dir in &a.frames {
        let views = load_views(dir, &cameras)?;
        let out = enc.encode_inter(&views)?;
        if let Some(kf) = out.keyframe_update {
            frames[0] = kf;
        }
        println!(
            "frame {}: {} bytes, {} primitives ({} compensated)",
            out.report.frame_index, out.report.bytes, out.report.primitives, out.report.compensated
        );
        frames.push(out.bitstream);
    }
    save_frames(&frames, &a.input)?;
    save_state(enc.state(), a.state.as_ref().unwrap_or(&a.prev_state))?;
    Ok(())
}

fn decode(a: &DecodeArgs) -> Result<(), CliError> {
    let frames = load_frames(&a.input)?;
    if a.frame == 0 || a.frame as usize > frames.len() {
        return Err(CliError::usage(format!("frame {} outside 1..={}", a.frame, frames.len())));
    }
    let decoded = decode_stream(&frames[..a.frame as usize])?;
    let set = decoded.last().expect("at least one frame");
    write_raw_frame(set, create(&a.out)?)?;
    Ok(())
}

fn render_cmd(a: &RenderArgs) -> Result<(), CliError> {
    let set = read_raw_frame(open(&a.input)?, 1)?;
    let cams = load_cameras(&a.camera)?;
    let cam = cams
        .get(a.index)
        .ok_or_else(|| CliError::usage(format!("camera index {} outside a list of {}", a.index, cams.len())))?;
    render(&set.primitives, cam, a.background).image.write_ppm(create(&a.out)?)?;
    Ok(())
}

/// The frame as `decode` writes it, so metrics match a decode + render.
fn as_stored(set: &GaussianFrameSet) -> Result<GaussianFrameSet, CliError> {
    let mut buf = Vec::new();
    write_raw_frame(set, &mut buf)?;
    Ok(read_raw_frame(buf.as_slice(), set.frame_index)?)
}

struct FrameQuality {
    bytes: usize,
    psnr: f64,
    ssim: f64,
}

/// Test-view quality of every frame in `frames` against a `synth` directory.
fn evaluate(frames: &[FrameBitstream], truth: &Path, background: [f64; 3]) -> Result<Vec<FrameQuality>, CliError> {
    let test_cam = load_cameras(&truth.join("test_camera.json"))?
        .into_iter()
        .next()
        .ok_or_else(|| CliError::Codec(Error::Format("empty test camera list".into())))?;
    let decoded = decode_stream(frames)?;
    decoded
        .iter()
        .zip(frames)
        .map(|(set, f)| {
            let path = truth.join(frame_dir_name(f.frame_index as usize)).join("test.ppm");
            let view = View { camera: test_cam.clone(), image: Image::read_ppm(open(&path)?)? };
            let (psnr, ssim) = view_quality(&as_stored(set)?.primitives, &view, background)?;
            Ok(FrameQuality { bytes: f.byte_len(), psnr, ssim })
        })
        .collect()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let frames = load_frames(&a.stream)?;
    let q = evaluate(&frames, &a.truth, a.background)?;
    println!("frame,bits,psnr_db,ssim");
    for (f, r) in frames.iter().zip(&q) {
        println!("{},{},{:.6},{:.6}", f.frame_index, r.bytes * 8, r.psnr, r.ssim);
    }
    println!(
        "mean,{:.1},{:.6},{:.6}",
        mean(q.iter().map(|r| r.bytes as f64 * 8.0)),
        mean(q.iter().map(|r| r.psnr)),
        mean(q.iter().map(|r| r.ssim))
    );
    Ok(())
}

/// Frame directories `frame_001`, `frame_002`, … present under `scene`.
fn scene_frames(scene: &Path) -> Vec<PathBuf> {
    (1..).map(|t| scene.join(frame_dir_name(t))).take_while(|p| p.is_dir()).collect()
}

fn rd_point(cfg: TrainConfig, scene: &Path, background: [f64; 3]) -> Result<RdPoint, CliError> {
    let lambda1 = cfg.lambda1;
    let cameras = load_cameras(&scene.join("cameras.json"))?;
    let dirs = scene_frames(scene);
    if dirs.len() < 2 {
        return Err(CliError::usage(format!("{} holds fewer than 2 frames", scene.display())));
    }
    let init = read_raw_frame(open(&scene.join("init.4dgs"))?, 1)?;
    let mut enc = Encoder::new(cfg)?;
    let mut frames = vec![enc.encode_keyframe(&init.primitives, &load_views(&dirs[0], &cameras)?)?.bitstream];
    for d in &dirs[1..] {
        let out = enc.encode_inter(&load_views(d, &cameras)?)?;
        if let Some(kf) = out.keyframe_update {
            frames[0] = kf;
        }
        frames.push(out.bitstream);
    }
    let q = evaluate(&frames, scene, background)?;
    Ok(RdPoint {
        lambda1,
        bits_per_frame: mean(q.iter().map(|r| r.bytes as f64 * 8.0)),
        psnr_db: mean(q.iter().map(|r| r.psnr)),
        ssim: mean(q.iter().map(|r| r.ssim)),
    })
}

fn sweep(base: &TrainConfig, lambdas: &[f64], scene: &Path, label: &str) -> Result<RdCurve, CliError> {
    let mut points = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        let mut cfg = base.clone();
        cfg.lambda1 = l;
        let p = rd_point(cfg, scene, base.background)?;
        println!("{label} lambda1 {l}: {:.1} bits/frame, {:.4} dB, SSIM {:.5}", p.bits_per_frame, p.psnr_db, p.ssim);
        points.push(p);
    }
    Ok(RdCurve { label: label.to_string(), points })
}

fn rdcurve(a: &RdcurveArgs) -> Result<(), CliError> {
    if a.lambdas.is_empty() {
        return Err(CliError::usage("no lambdas given"));
    }
    let cfg = a.cfg.resolve(None)?;
    let mut curves = vec![sweep(&cfg, &a.lambdas, &a.scene, &a.label)?];
    if a.ablate_compensation {
        let mut off = cfg.clone();
        off.compensation.enabled = false;
        curves.push(sweep(&off, &a.lambdas, &a.scene, &format!("{}-no-compensation", a.label))?);
        let (bdbr, bdpsnr) = bjontegaard(&curves[1].points, &curves[0].points)?;
        println!("compensation vs none: BDBR {bdbr:.3}%, BD-PSNR {bdpsnr:.4} dB");
    }
    rd_report(&curves, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn seed_hint(cmd: &Command) -> Option<String> {
    let cfg = match cmd {
        Command::Keyframe(a) => a.cfg.resolve(a.lambda1).ok(),
        Command::Rdcurve(a) => a.cfg.resolve(None).ok(),
        Command::Stream(a) => load_state(&a.prev_state).ok().map(|s| s.config),
        _ => None,
    }?;
    Some(format!("seed {}, config {}", cfg.seed, serde_json::to_string(&cfg).unwrap_or_default()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Keyframe(a) => keyframe(a),
        Command::Stream(a) => stream(a),
        Command::Decode(a) => decode(a),
        Command::Render(a) => render_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Rdcurve(a) => rdcurve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            if code == 4 {
                if let Some(h) = seed_hint(&cli.command) {
                    eprintln!("{h}");
                }
            }
            ExitCode::from(code)
        }
    }
}
