//! Training and coding configuration, loadable from flat `key = value` text.

use std::f64::consts::FRAC_PI_4;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{GridConfig, DEFAULT_HIDDEN_WIDTH};

/// The four rate-distortion trade-offs swept by default, highest rate penalty first.
pub const DEFAULT_LAMBDAS: [f64; 4] = [0.0003, 0.0001, 0.00005, 0.00001];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub grid: f64,
    pub mlp: f64,
    /// Multiplied by the scene extent.
    pub center: f64,
    /// Center rate for compensated primitives, also times the scene extent.
    /// A clone has the few iterations of one stage to reach the content it
    /// stands in for.
    pub delta_center: f64,
    pub sh: f64,
    pub opacity: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub entropy: f64,
    /// Every rate decays exponentially to this fraction of its start value
    /// over the iterations of a stage.
    pub final_ratio: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            grid: 5e-3,
            mlp: 1e-4,
            center: 1.6e-4,
            delta_center: 1.6e-2,
            sh: 2.5e-3,
            opacity: 5e-2,
            log_scale: 5e-3,
            rotation: 1e-3,
            entropy: 1e-3,
            final_ratio: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompensationConfig {
    pub enabled: bool,
    pub tau_g: f64,
    pub tau_mu: f64,
    pub tau_r: f64,
    /// Motion clones need `max(log_scale)` above this.
    pub scale_floor: f64,
    /// New clones per frame, as a fraction of the previous frame's count.
    pub clone_cap: f64,
    pub prune_opacity: f64,
}

impl Default for CompensationConfig {
    fn default() -> Self {
        CompensationConfig {
            enabled: true,
            tau_g: 1e-4,
            tau_mu: 0.08,
            tau_r: FRAC_PI_4,
            scale_floor: -0.01,
            clone_cap: 0.05,
            prune_opacity: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub keyframe_iters: usize,
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    /// Trailing iterations of every stage that use rounding instead of noise.
    pub hard_quant_iters: usize,
    pub q_grid: f64,
    pub q_sh: f64,
    pub sh_degree: usize,
    pub grid: GridConfig,
    pub hidden_width: usize,
    pub lr: LearningRates,
    pub compensation: CompensationConfig,
    pub background: [f64; 3],
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1: 0.0001,
            lambda2: 0.2,
            keyframe_iters: 2000,
            stage1_iters: 400,
            stage2_iters: 100,
            hard_quant_iters: 50,
            q_grid: 10.0,
            q_sh: 50.0,
            sh_degree: crate::model::DEFAULT_SH_DEGREE,
            grid: GridConfig::default(),
            hidden_width: DEFAULT_HIDDEN_WIDTH,
            lr: LearningRates::default(),
            compensation: CompensationConfig::default(),
            background: [0.0; 3],
            seed: 0,
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse().map_err(|_| Error::invalid(format!("`{key}` expects a number, got `{v}`")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| Error::invalid(format!("`{key}` expects a non-negative integer, got `{v}`")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| parse_usize(key, s.trim())).collect()
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let iters = [self.keyframe_iters, self.stage1_iters, self.stage2_iters];
        if iters.contains(&0) {
            return Err(Error::invalid("iteration counts must be ≥ 1"));
        }
        if !(self.lambda1 >= 0.0) || !self.lambda1.is_finite() {
            return Err(Error::invalid(format!("lambda1 {} must be ≥ 0", self.lambda1)));
        }
        if !(0.0..=1.0).contains(&self.lambda2) {
            return Err(Error::invalid(format!("lambda2 {} outside [0, 1]", self.lambda2)));
        }
        if !(self.q_grid > 0.0) || !(self.q_sh > 0.0) {
            return Err(Error::invalid("quantization steps must be positive"));
        }
        if self.sh_degree > crate::model::sh::MAX_SH_DEGREE {
            return Err(Error::invalid(format!("sh_degree {} above 3", self.sh_degree)));
        }
        if !(self.lr.final_ratio > 0.0 && self.lr.final_ratio <= 1.0) {
            return Err(Error::invalid(format!("lr.final_ratio {} outside (0, 1]", self.lr.final_ratio)));
        }
        if self.hidden_width == 0 {
            return Err(Error::invalid("hidden_width must be ≥ 1"));
        }
        self.grid.validate()
    }

    /// Sets one option by its flat key (`lr.grid`, `compensation.tau_g`, ...).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let f = || parse_f64(key, v);
        match key {
            "lambda1" => self.lambda1 = f()?,
            "lambda2" => self.lambda2 = f()?,
            "keyframe_iters" => self.keyframe_iters = parse_usize(key, v)?,
            "stage1_iters" => self.stage1_iters = parse_usize(key, v)?,
            "stage2_iters" => self.stage2_iters = parse_usize(key, v)?,
            "hard_quant_iters" => self.hard_quant_iters = parse_usize(key, v)?,
            "q_grid" => self.q_grid = f()?,
            "q_sh" => self.q_sh = f()?,
            "sh_degree" => self.sh_degree = parse_usize(key, v)?,
            "grid_resolutions" => self.grid.resolutions = parse_list(key, v)?,
            "grid_channels" => self.grid.channels = parse_list(key, v)?,
            "hidden_width" => self.hidden_width = parse_usize(key, v)?,
            "seed" => self.seed = v.parse().map_err(|_| Error::invalid(format!("bad seed `{v}`")))?,
            "background" => {
                let parts: Vec<f64> = v.split(',').map(|s| parse_f64(key, s.trim())).collect::<Result<_>>()?;
                self.background = parts
                    .try_into()
                    .map_err(|_| Error::invalid("background expects three comma-separated values"))?;
            }
            "lr.grid" => self.lr.grid = f()?,
            "lr.mlp" => self.lr.mlp = f()?,
            "lr.center" => self.lr.center = f()?,
            "lr.delta_center" => self.lr.delta_center = f()?,
            "lr.sh" => self.lr.sh = f()?,
            "lr.opacity" => self.lr.opacity = f()?,
            "lr.log_scale" => self.lr.log_scale = f()?,
            "lr.rotation" => self.lr.rotation = f()?,
            "lr.entropy" => self.lr.entropy = f()?,
            "lr.final_ratio" => self.lr.final_ratio = f()?,
            "compensation.enabled" => {
                self.compensation.enabled =
                    v.parse().map_err(|_| Error::invalid(format!("`{key}` expects true or false")))?
            }
            "compensation.tau_g" => self.compensation.tau_g = f()?,
            "compensation.tau_mu" => self.compensation.tau_mu = f()?,
            "compensation.tau_r" => self.compensation.tau_r = f()?,
            "compensation.scale_floor" => self.compensation.scale_floor = f()?,
            "compensation.clone_cap" => self.compensation.clone_cap = f()?,
            "compensation.prune_opacity" => self.compensation.prune_opacity = f()?,
            _ => return Err(Error::invalid(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v).map_err(|e| Error::invalid(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        self.apply_text(&std::fs::read_to_string(path)?)
    }
}
