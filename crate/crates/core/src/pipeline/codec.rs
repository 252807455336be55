//! Frame encoder and decoder. The encoder keeps a private decoder fed with
//! its own output, so both ends reconstruct from identical bytes.

use log::info;
use serde::{Deserialize, Serialize};

use crate::compensation::{
    clone_cap, clone_rng, plan_clones, select_gradient_clones, select_motion_clones, spawn_compensated, CompensatedSet,
    GradientStats,
};
use crate::config::TrainConfig;
use crate::entropy::{decode_tensor, encode_tensor, FactorizedEntropyModel};
use crate::error::{Error, Result};
use crate::model::{num_coeffs, GaussianFrameSet, GaussianPrimitive, GEOMETRY_FLOATS};
use crate::motion::{apply_motion, predict_motion, Aabb, GridConfig, MotionGrid, MotionMlps, BBOX_DILATION};
use crate::stream::{block_id, Block, FrameBitstream, FrameType};

use super::train::{train_keyframe, train_stage1, train_stage2, LossTrace};
use super::{stage_rng, View, STAGE_MLP_INIT};

/// Normalization box for the motion grid of the frame after `reference`.
pub fn motion_bbox(reference: &GaussianFrameSet) -> Result<Aabb> {
    Aabb::from_points(reference.primitives.iter().map(|g| &g.center), BBOX_DILATION)
}

fn config_block(sh_degree: usize, grid: &GridConfig, hidden: usize) -> Block {
    let mut v = vec![sh_degree as f64, grid.levels() as f64];
    v.extend(grid.resolutions.iter().map(|&r| r as f64));
    v.extend(grid.channels.iter().map(|&c| c as f64));
    v.push(hidden as f64);
    Block::raw(block_id::CONFIG, v)
}

fn parse_config(data: &[f32]) -> Result<(usize, GridConfig, usize)> {
    let ints: Vec<usize> = data
        .iter()
        .map(|&v| {
            if v.fract() == 0.0 && (0.0..=65536.0).contains(&v) {
                Ok(v as usize)
            } else {
                Err(Error::format(format!("config value {v} is not a small integer")))
            }
        })
        .collect::<Result<_>>()?;
    let levels = *ints.get(1).ok_or_else(|| Error::format("config block too short"))?;
    if ints.len() != 3 + 2 * levels {
        return Err(Error::format(format!("config block has {} values for {levels} levels", ints.len())));
    }
    let grid = GridConfig {
        resolutions: ints[2..2 + levels].to_vec(),
        channels: ints[2 + levels..2 + 2 * levels].to_vec(),
    };
    grid.validate().map_err(|e| Error::format(format!("grid configuration: {e}")))?;
    let hidden = ints[2 + 2 * levels];
    if ints[0] > crate::model::sh::MAX_SH_DEGREE || hidden == 0 {
        return Err(Error::format("config block out of range"));
    }
    Ok((ints[0], grid, hidden))
}

fn raw(f: &FrameBitstream, id: u8) -> Result<&[f32]> {
    match f.block(id) {
        Some(Block::Raw { data, .. }) => Ok(data),
        _ => Err(Error::format(format!("frame {} lacks block {id:#04x}", f.frame_index))),
    }
}

fn coded(f: &FrameBitstream, id: u8, count: usize) -> Result<Vec<f64>> {
    match f.block(id) {
        Some(b @ Block::Coded { table, payload, .. }) => {
            let header = b.tensor_header(count).expect("coded block");
            decode_tensor(payload, table, &header)
        }
        _ => Err(Error::format(format!("frame {} lacks block {id:#04x}", f.frame_index))),
    }
}

/// Primitives from raw geometry and decoded SH, rotations re-normalized.
fn assemble(geometry: &[f32], sh: &[f64], sh_len: usize) -> Result<Vec<GaussianPrimitive>> {
    let n = geometry.len() / GEOMETRY_FLOATS;
    let g64: Vec<f64> = geometry.iter().map(|&v| v as f64).collect();
    (0..n)
        .map(|i| {
            let mut g = GaussianPrimitive::from_geometry(
                &g64[GEOMETRY_FLOATS * i..GEOMETRY_FLOATS * (i + 1)],
                sh[sh_len * i..sh_len * (i + 1)].to_vec(),
            );
            g.rotation = g.rotation.normalized().ok_or_else(|| Error::format(format!("zero rotation on primitive {i}")))?;
            if !g.is_finite() {
                return Err(Error::format(format!("non-finite attribute on primitive {i}")));
            }
            Ok(g)
        })
        .collect()
}

fn geometry_count(geometry: &[f32], what: &str) -> Result<usize> {
    if !geometry.len().is_multiple_of(GEOMETRY_FLOATS) {
        return Err(Error::format(format!("{what} block of {} floats", geometry.len())));
    }
    Ok(geometry.len() / GEOMETRY_FLOATS)
}

#[derive(Clone, Debug)]
struct DecoderState {
    reference: GaussianFrameSet,
    mlps: MotionMlps,
    grid: GridConfig,
    sh_degree: usize,
}

/// Rebuilds frames from bitstreams; holds the reference buffer.
#[derive(Clone, Debug, Default)]
pub struct Decoder {
    state: Option<DecoderState>,
}

impl Decoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// The last reconstructed frame.
    pub fn reference(&self) -> Option<&GaussianFrameSet> {
        self.state.as_ref().map(|s| &s.reference)
    }

    pub fn mlps(&self) -> Option<&MotionMlps> {
        self.state.as_ref().map(|s| &s.mlps)
    }

    pub fn decode_frame(&mut self, f: &FrameBitstream) -> Result<GaussianFrameSet> {
        match f.frame_type {
            FrameType::Key => self.decode_key(f),
            FrameType::Inter => self.decode_inter(f),
        }
    }

    fn decode_key(&mut self, f: &FrameBitstream) -> Result<GaussianFrameSet> {
        let (sh_degree, grid, hidden) = parse_config(raw(f, block_id::CONFIG)?)?;
        let geometry = raw(f, block_id::ATTRIBUTES)?;
        let n = geometry_count(geometry, "attribute")?;
        if n == 0 {
            return Err(Error::format("keyframe without primitives"));
        }
        let sh_len = num_coeffs(sh_degree);
        let sh = coded(f, block_id::SH, n * sh_len)?;
        let weights: Vec<f64> = raw(f, block_id::MLP)?.iter().map(|&v| v as f64).collect();
        let mlps = MotionMlps::from_flat(grid.feature_width(), hidden, &weights).map_err(|e| Error::format(e.to_string()))?;
        let reference = GaussianFrameSet::new(assemble(geometry, &sh, sh_len)?, f.frame_index);
        self.state = Some(DecoderState { reference: reference.clone(), mlps, grid, sh_degree });
        Ok(reference)
    }

    fn decode_inter(&mut self, f: &FrameBitstream) -> Result<GaussianFrameSet> {
        let st = self.state.as_mut().ok_or_else(|| Error::format("inter-frame before any keyframe"))?;
        if f.frame_index != st.reference.frame_index.wrapping_add(1) {
            return Err(Error::format(format!(
                "frame {} does not follow frame {}",
                f.frame_index, st.reference.frame_index
            )));
        }
        let values = coded(f, block_id::GRID, st.grid.total_len())?;
        let grid = MotionGrid::from_values(st.grid.clone(), motion_bbox(&st.reference)?, values)?;
        let mut frame = apply_motion(&st.reference, &grid, &st.mlps)?;
        let marker = f.block(block_id::NO_COMPENSATION).is_some();
        match (marker, f.block(block_id::DELTA_ATTRIBUTES), f.block(block_id::DELTA_SH)) {
            (true, None, None) => {}
            (false, Some(_), Some(_)) => {
                let geometry = raw(f, block_id::DELTA_ATTRIBUTES)?;
                let n = geometry_count(geometry, "compensated attribute")?;
                let sh_len = num_coeffs(st.sh_degree);
                let sh = coded(f, block_id::DELTA_SH, n * sh_len)?;
                frame.primitives.extend(assemble(geometry, &sh, sh_len)?);
            }
            _ => return Err(Error::format(format!("frame {} has an inconsistent compensation block set", f.frame_index))),
        }
        frame.frame_index = f.frame_index;
        st.reference = frame.clone();
        Ok(frame)
    }
}

/// Decodes every frame of a stream in order.
pub fn decode_stream(frames: &[FrameBitstream]) -> Result<Vec<GaussianFrameSet>> {
    let mut d = Decoder::new();
    frames.iter().map(|f| d.decode_frame(f)).collect()
}

/// Per-frame training and size summary.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameReport {
    pub frame_index: u32,
    pub bytes: usize,
    pub primitives: usize,
    pub compensated: usize,
    /// Keyframe loop for the keyframe, stage 1 otherwise.
    pub loss: LossTrace,
    pub stage2_loss: LossTrace,
    /// Mean training-view PSNR of the moved previous frame alone.
    pub psnr_stage1: f64,
    /// Mean training-view PSNR of the reconstruction.
    pub psnr: f64,
}

fn mean_psnr(prims: &[GaussianPrimitive], views: &[View], background: [f64; 3]) -> Result<f64> {
    let mut total = 0.0;
    for v in views {
        total += crate::eval::view_quality(prims, v, background)?.0;
    }
    Ok(total / views.len() as f64)
}

#[derive(Clone, Debug)]
pub struct EncodedFrame {
    pub bitstream: FrameBitstream,
    /// What any decoder reconstructs from the stream so far.
    pub reconstruction: GaussianFrameSet,
    /// Replacement for the stream's keyframe, emitted once the shared MLPs
    /// are trained on the first inter-frame.
    pub keyframe_update: Option<FrameBitstream>,
    pub report: FrameReport,
}

/// Everything an encoder carries between frames besides the stream itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderState {
    pub config: TrainConfig,
    pub sh_model: FactorizedEntropyModel,
    pub grid_model: FactorizedEntropyModel,
    pub delta_sh_model: FactorizedEntropyModel,
}

impl EncoderState {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let sh_channels = num_coeffs(config.sh_degree);
        Ok(EncoderState {
            sh_model: FactorizedEntropyModel::new(sh_channels),
            grid_model: FactorizedEntropyModel::new(config.grid.total_channels()),
            delta_sh_model: FactorizedEntropyModel::new(sh_channels),
            config,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub state: EncoderState,
    mirror: Decoder,
    keyframe: Option<FrameBitstream>,
    mlps_trained: bool,
}

impl Encoder {
    pub fn new(config: TrainConfig) -> Result<Self> {
        Ok(Encoder { state: EncoderState::new(config)?, mirror: Decoder::new(), keyframe: None, mlps_trained: false })
    }

    /// Continues a stream: replays `frames` through the internal decoder.
    pub fn resume(state: EncoderState, frames: &[FrameBitstream]) -> Result<Self> {
        state.config.validate()?;
        let mut enc = Encoder { state, mirror: Decoder::new(), keyframe: None, mlps_trained: frames.len() >= 2 };
        for f in frames {
            enc.mirror.decode_frame(f)?;
        }
        enc.keyframe = frames.first().cloned();
        let st = enc.mirror.state.as_ref().ok_or_else(|| Error::invalid("cannot resume an empty stream"))?;
        if st.grid != enc.state.config.grid || st.sh_degree != enc.state.config.sh_degree {
            return Err(Error::invalid("stream configuration differs from the encoder state"));
        }
        Ok(enc)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.state.config
    }

    pub fn state(&self) -> &EncoderState {
        &self.state
    }

    /// The encoder-side reference buffer.
    pub fn reference(&self) -> Option<&GaussianFrameSet> {
        self.mirror.reference()
    }

    pub fn encode_keyframe(&mut self, init: &[GaussianPrimitive], views: &[View]) -> Result<EncodedFrame> {
        if self.keyframe.is_some() {
            return Err(Error::invalid("keyframe already encoded"));
        }
        let cfg = self.state.config.clone();
        let trained = train_keyframe(init, views, &cfg, &mut self.state.sh_model)?;
        let mut mlps = MotionMlps::init(cfg.grid.feature_width(), cfg.hidden_width, &mut stage_rng(cfg.seed, 1, STAGE_MLP_INIT));
        mlps.round_to_f32();
        let prims = &trained.primitives;
        let sh: Vec<f64> = prims.iter().flat_map(|g| g.sh.iter().copied()).collect();
        let mut f = FrameBitstream::new(FrameType::Key, 1);
        f.blocks.push(config_block(cfg.sh_degree, &cfg.grid, cfg.hidden_width));
        f.blocks.push(Block::raw(block_id::ATTRIBUTES, prims.iter().flat_map(|g| g.geometry())));
        f.blocks.push(Block::coded(block_id::SH, &encode_tensor(&sh, cfg.q_sh)?));
        f.blocks.push(Block::raw(block_id::MLP, mlps.to_flat()));
        let reconstruction = self.mirror.decode_frame(&f)?;
        self.keyframe = Some(f.clone());
        let psnr = mean_psnr(&reconstruction.primitives, views, cfg.background)?;
        let report = FrameReport {
            frame_index: 1,
            bytes: f.byte_len(),
            primitives: reconstruction.len(),
            compensated: 0,
            loss: trained.loss,
            stage2_loss: LossTrace::default(),
            psnr_stage1: psnr,
            psnr,
        };
        info!("keyframe: {} primitives, {} bytes", report.primitives, report.bytes);
        Ok(EncodedFrame { bitstream: f, reconstruction, keyframe_update: None, report })
    }

    pub fn encode_inter(&mut self, views: &[View]) -> Result<EncodedFrame> {
        let cfg = self.state.config.clone();
        let st = self.mirror.state.clone().ok_or_else(|| Error::invalid("encode a keyframe first"))?;
        let frame = st.reference.frame_index + 1;
        let bbox = motion_bbox(&st.reference)?;
        let train_mlps = !self.mlps_trained;
        let s1 = train_stage1(
            &st.reference.primitives,
            &bbox,
            &st.mlps,
            train_mlps,
            views,
            &cfg,
            &mut self.state.grid_model,
            frame,
        )?;

        let mut mlps = st.mlps.clone();
        let mut keyframe_update = None;
        if train_mlps {
            mlps = s1.mlps.clone();
            mlps.round_to_f32();
            let mut kf = self.keyframe.clone().ok_or_else(|| Error::invalid("encoder lost its keyframe"))?;
            *kf.block_mut(block_id::MLP).expect("keyframe has an MLP block") = Block::raw(block_id::MLP, mlps.to_flat());
            let mut mirror = Decoder::new();
            mirror.decode_frame(&kf)?;
            self.mirror = mirror;
            self.keyframe = Some(kf.clone());
            keyframe_update = Some(kf);
            self.mlps_trained = true;
        }

        let grid_enc = encode_tensor(&s1.grid_values, cfg.q_grid)?;
        let grid = MotionGrid::from_values(cfg.grid.clone(), bbox, grid_enc.reconstruction.clone())?;
        let moved = apply_motion(&st.reference, &grid, &mlps)?;
        let clones = self.compensate(&st.reference, &moved, &grid, &mlps, &s1.stats, frame)?;
        let extent = bbox.extent() / BBOX_DILATION;
        let (delta, stage2_loss) =
            train_stage2(&moved.primitives, clones, views, &cfg, &mut self.state.delta_sh_model, frame, extent)?;

        let psnr_stage1 = mean_psnr(&moved.primitives, views, cfg.background)?;
        let mut f = FrameBitstream::new(FrameType::Inter, frame);
        f.blocks.push(Block::coded(block_id::GRID, &grid_enc));
        let mut delta_len = 0;
        if !delta.is_empty() {
            let sh: Vec<f64> = delta.primitives.iter().flat_map(|g| g.sh.iter().copied()).collect();
            let mut with = f.clone();
            with.blocks.push(Block::raw(block_id::DELTA_ATTRIBUTES, delta.primitives.iter().flat_map(|g| g.geometry())));
            with.blocks.push(Block::coded(block_id::DELTA_SH, &encode_tensor(&sh, cfg.q_sh)?));
            // Compensation is sent only when the decoded frame gets better.
            let trial = self.mirror.clone().decode_frame(&with)?;
            if mean_psnr(&trial.primitives, views, cfg.background)? > psnr_stage1 {
                f = with;
                delta_len = delta.len();
            }
        }
        if delta_len == 0 {
            f.blocks.push(Block::Raw { id: block_id::NO_COMPENSATION, data: Vec::new() });
        }
        let reconstruction = self.mirror.decode_frame(&f)?;
        let report = FrameReport {
            frame_index: frame,
            bytes: f.byte_len(),
            primitives: reconstruction.len(),
            compensated: delta_len,
            loss: s1.loss,
            stage2_loss,
            psnr_stage1,
            psnr: mean_psnr(&reconstruction.primitives, views, cfg.background)?,
        };
        info!("frame {frame}: {} primitives (+{}), {} bytes", report.primitives, report.compensated, report.bytes);
        Ok(EncodedFrame { bitstream: f, reconstruction, keyframe_update, report })
    }

    /// Clones spawned around the moved primitives that stage 1 left
    /// under-fitted or that move fast.
    fn compensate(
        &self,
        reference: &GaussianFrameSet,
        moved: &GaussianFrameSet,
        grid: &MotionGrid,
        mlps: &MotionMlps,
        stats: &GradientStats,
        frame: u32,
    ) -> Result<CompensatedSet> {
        let c = &self.state.config.compensation;
        if !c.enabled {
            return Ok(CompensatedSet::default());
        }
        let avg = stats.averages();
        let gradient = select_gradient_clones(&avg, c.tau_g);
        let motions =
            reference.primitives.iter().map(|g| predict_motion(&g.center, grid, mlps)).collect::<Result<Vec<_>>>()?;
        let scales: Vec<_> = reference.primitives.iter().map(|g| g.log_scale).collect();
        let motion = select_motion_clones(&motions, &scales, c.tau_mu, c.tau_r, c.scale_floor);
        let plan = plan_clones(&avg, &gradient, &motion, clone_cap(reference.len(), c.clone_cap));
        let mut set = CompensatedSet::default();
        for (i, kind) in plan {
            let mut rng = clone_rng(self.state.config.seed, frame, i);
            for g in spawn_compensated(&moved.primitives[i], kind, &mut rng) {
                set.primitives.push(g);
                set.provenance.push(kind);
            }
        }
        Ok(set)
    }
}

/// A whole sequence through one encoder.
#[derive(Clone, Debug)]
pub struct EncodedSequence {
    /// Final bitstreams, keyframe updates applied.
    pub frames: Vec<FrameBitstream>,
    pub reconstructions: Vec<GaussianFrameSet>,
    pub reports: Vec<FrameReport>,
    pub state: EncoderState,
}

impl EncodedSequence {
    pub fn total_bytes(&self) -> usize {
        self.frames.iter().map(FrameBitstream::byte_len).sum()
    }
}

/// Encodes frame 1 from `init` and every later frame from its views.
pub fn encode_sequence(config: TrainConfig, init: &[GaussianPrimitive], views: &[Vec<View>]) -> Result<EncodedSequence> {
    let first = views.first().ok_or_else(|| Error::invalid("no frames to encode"))?;
    let mut enc = Encoder::new(config)?;
    let mut frames = Vec::with_capacity(views.len());
    let mut reconstructions = Vec::with_capacity(views.len());
    let mut reports = Vec::with_capacity(views.len());
    let key = enc.encode_keyframe(init, first)?;
    frames.push(key.bitstream);
    reconstructions.push(key.reconstruction);
    reports.push(key.report);
    for v in &views[1..] {
        let out = enc.encode_inter(v)?;
        if let Some(kf) = out.keyframe_update {
            frames[0] = kf;
        }
        frames.push(out.bitstream);
        reconstructions.push(out.reconstruction);
        reports.push(out.report);
    }
    Ok(EncodedSequence { frames, reconstructions, reports, state: enc.state })
}
