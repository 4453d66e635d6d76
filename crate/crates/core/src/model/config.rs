use alloc::format;

use crate::error::{Error, Result};

/// Which modes the orientation loss is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum YawModes {
    /// Every mode against its own anchor path.
    #[default]
    All,
    /// Only the winning mode.
    Winner,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub num_heads: usize,
    /// Number of modes K (and anchor slots).
    pub num_modes: usize,
    /// Length of the map latent fused into agent nodes.
    pub map_latent_dim: usize,
    pub dropout_map: f64,
    /// Weight of the scoring loss.
    pub w1: f64,
    /// Weight of the orientation loss.
    pub w2: f64,
    pub score_margin: f64,
    pub smooth_l1_beta: f64,
    pub yaw_modes: YawModes,
    /// Residual decoder outputs are multiplied by this (meters).
    pub traj_scale: f64,
    /// Positions are divided by this before embedding.
    pub pos_scale: f64,
    /// Velocities are divided by this before embedding.
    pub vel_scale: f64,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 128,
            num_heads: 4,
            num_modes: 10,
            map_latent_dim: 128,
            dropout_map: 0.5,
            w1: 1.0,
            w2: 1.0,
            score_margin: 0.2,
            smooth_l1_beta: 1.0,
            yaw_modes: YawModes::All,
            traj_scale: 5.0,
            pos_scale: 50.0,
            vel_scale: 10.0,
            leaky_slope: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("model config: {m}")));
        if self.hidden_dim == 0 || self.num_heads == 0 || self.hidden_dim % self.num_heads != 0 {
            return bad("hidden_dim must be a positive multiple of num_heads");
        }
        if self.num_modes == 0 || self.num_modes > usize::from(u8::MAX) {
            return bad("num_modes must be in 1..=255");
        }
        if !(0.0..1.0).contains(&self.dropout_map) {
            return bad("dropout_map must be in [0, 1)");
        }
        if self.map_latent_dim == 0 {
            return bad("map_latent_dim must be positive");
        }
        let positive = [self.smooth_l1_beta, self.traj_scale, self.pos_scale, self.vel_scale];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("scales must be positive and finite");
        }
        if [self.w1, self.w2, self.score_margin].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("loss weights and margin must be non-negative");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }
}
