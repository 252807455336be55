//! Keyframe training, the two per-frame stages, and the encoder/decoder
//! pair that keeps reference buffers in lock step.

mod codec;
pub mod objective;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::Camera;
use crate::render::Image;

pub use codec::{decode_stream, encode_sequence, motion_bbox, Decoder, EncodedFrame, EncodedSequence, Encoder, EncoderState, FrameReport};
pub use train::{train_keyframe, train_stage1, train_stage2, KeyframeTraining, LossTrace, MotionTraining};

/// A training image with the camera that saw it.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub image: Image,
}

pub(crate) const STAGE_KEYFRAME: u64 = 1;
pub(crate) const STAGE_MOTION: u64 = 2;
pub(crate) const STAGE_COMPENSATION: u64 = 3;
pub(crate) const STAGE_MLP_INIT: u64 = 4;

/// Generator for one stage of one frame.
pub(crate) fn stage_rng(seed: u64, frame: u32, stage: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((frame as u64) << 8) | stage);
    rng
}
