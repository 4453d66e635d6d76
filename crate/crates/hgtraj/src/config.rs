//! Run configuration: one JSON document, every key optional, unknown keys
//! rejected. `--set section.key=value` overrides patch the document before
//! it is validated.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use hgtraj_core::autodiff::LrSchedule;
use hgtraj_core::eval::MissRule;
use hgtraj_core::graph::GraphConfig;
use hgtraj_core::lane::ProjectionGate;
use hgtraj_core::model::{AutoencoderConfig, AutoencoderTraining, ModelConfig, TrainConfig, YawModes};
use hgtraj_core::pipeline::SampleConfig;
use hgtraj_core::synth::GeneratorSpec;
use hgtraj_core::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub num_modes: usize,
    pub map_latent_dim: usize,
    pub dropout_map: f64,
    pub w1: f64,
    pub w2: f64,
    pub score_margin: f64,
    pub smooth_l1_beta: f64,
    /// `all` or `winner`.
    pub yaw_modes: String,
    pub traj_scale: f64,
    pub pos_scale: f64,
    pub vel_scale: f64,
    pub leaky_slope: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            hidden_dim: m.hidden_dim,
            num_heads: m.num_heads,
            num_modes: m.num_modes,
            map_latent_dim: m.map_latent_dim,
            dropout_map: m.dropout_map,
            w1: m.w1,
            w2: m.w2,
            score_margin: m.score_margin,
            smooth_l1_beta: m.smooth_l1_beta,
            yaw_modes: "all".into(),
            traj_scale: m.traj_scale,
            pos_scale: m.pos_scale,
            vel_scale: m.vel_scale,
            leaky_slope: m.leaky_slope,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub template: String,
    pub road_bound: usize,
    pub non_road_bound: usize,
    pub num_scenes: usize,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        Self {
            template: "y_fork".into(),
            road_bound: 2,
            non_road_bound: 1,
            num_scenes: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub map_step: f64,
    pub drives_on_radius: f64,
    pub anchor_radius: f64,
    pub projection_radius: f64,
    pub heading_tol: f64,
    pub anchor_max_len: f64,
    pub ssg_horizon: f64,
}

impl Default for GraphSection {
    fn default() -> Self {
        let s = SampleConfig::default();
        Self {
            map_step: s.graph.map_step,
            drives_on_radius: s.graph.drives_on_radius,
            anchor_radius: s.graph.anchor_radius,
            projection_radius: s.gate.radius,
            heading_tol: s.gate.heading_tol,
            anchor_max_len: s.anchor_max_len,
            ssg_horizon: s.ssg_horizon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub weight_decay: f64,
    /// Write a checkpoint every this many epochs (0 = only the final one).
    pub checkpoint_every: usize,
    /// Compute training-set metrics every this many epochs (0 = never).
    pub eval_every: usize,
    /// Fuse autoencoder latents (requires `paths.autoencoder`).
    pub use_map_latents: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.schedule.base,
            lr_decay: t.schedule.factor,
            lr_decay_every: t.schedule.every,
            weight_decay: t.weight_decay,
            checkpoint_every: 5,
            eval_every: 0,
            use_map_latents: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderSection {
    pub channels: Vec<usize>,
    pub leaky_slope: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Patches sampled from the training scenes.
    pub num_patches: usize,
}

impl Default for AutoencoderSection {
    fn default() -> Self {
        let c = AutoencoderConfig::default();
        let t = AutoencoderTraining::default();
        Self {
            channels: c.channels,
            leaky_slope: c.leaky_slope,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            weight_decay: t.weight_decay,
            num_patches: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ks: Vec<usize>,
    /// `all` or `any`.
    pub miss_rule: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            ks: vec![1, 5, 10],
            miss_rule: "all".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub checkpoint: Option<PathBuf>,
    pub autoencoder: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub generator: GeneratorSection,
    pub graph: GraphSection,
    pub train: TrainSection,
    pub autoencoder: AutoencoderSection,
    pub eval: EvalSection,
    pub paths: PathsSection,
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidArgument(msg.into()).into()
}

impl RunConfig {
    /// Reads `path` (or starts from the defaults), applies `key=value`
    /// overrides in order and validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => serde_json::to_value(RunConfig::default())?,
        };
        // reject unknown keys in the file before defaults fill the gaps
        let cfg: RunConfig = serde_json::from_value(doc.clone()).map_err(|e| invalid(format!("config: {e}")))?;
        if !overrides.is_empty() {
            let mut full = serde_json::to_value(&cfg)?;
            for o in overrides {
                apply_override(&mut full, o)?;
            }
            doc = full;
        }
        let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config()?.validate()?;
        if self.train.use_map_latents && self.ae_config().latent_dim() != self.model.map_latent_dim {
            return Err(invalid(format!(
                "autoencoder latent size {} differs from model.map_latent_dim {}",
                self.ae_config().latent_dim(),
                self.model.map_latent_dim
            )));
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 || !(self.train.lr > 0.0) {
            return Err(invalid("train.epochs, train.batch_size and train.lr must be positive"));
        }
        if self.eval.ks.is_empty() || self.eval.ks.iter().any(|&k| k == 0 || k > self.model.num_modes) {
            return Err(invalid(format!("eval.ks must lie in 1..={}", self.model.num_modes)));
        }
        self.miss_rule()?;
        self.generator_spec()?;
        let g = &self.graph;
        if [g.map_step, g.drives_on_radius, g.anchor_radius, g.projection_radius, g.heading_tol, g.anchor_max_len, g.ssg_horizon]
            .iter()
            .any(|v| !(*v > 0.0) || !v.is_finite())
        {
            return Err(invalid("graph radii and lengths must be positive"));
        }
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let m = &self.model;
        let yaw_modes = match m.yaw_modes.as_str() {
            "all" => YawModes::All,
            "winner" => YawModes::Winner,
            other => return Err(invalid(format!("model.yaw_modes must be `all` or `winner`, got `{other}`"))),
        };
        Ok(ModelConfig {
            hidden_dim: m.hidden_dim,
            num_heads: m.num_heads,
            num_modes: m.num_modes,
            map_latent_dim: m.map_latent_dim,
            dropout_map: m.dropout_map,
            w1: m.w1,
            w2: m.w2,
            score_margin: m.score_margin,
            smooth_l1_beta: m.smooth_l1_beta,
            yaw_modes,
            traj_scale: m.traj_scale,
            pos_scale: m.pos_scale,
            vel_scale: m.vel_scale,
            leaky_slope: m.leaky_slope,
        })
    }

    pub fn sample_config(&self) -> SampleConfig {
        let g = &self.graph;
        SampleConfig {
            graph: GraphConfig {
                drives_on_radius: g.drives_on_radius,
                anchor_radius: g.anchor_radius,
                max_anchors: self.model.num_modes,
                map_step: g.map_step,
            },
            gate: ProjectionGate {
                radius: g.projection_radius,
                heading_tol: g.heading_tol,
            },
            anchor_max_len: g.anchor_max_len,
            ssg_horizon: g.ssg_horizon,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            schedule: LrSchedule {
                base: t.lr,
                factor: t.lr_decay,
                every: t.lr_decay_every,
            },
            weight_decay: t.weight_decay,
            seed: self.seed,
        }
    }

    pub fn ae_config(&self) -> AutoencoderConfig {
        AutoencoderConfig {
            channels: self.autoencoder.channels.clone(),
            leaky_slope: self.autoencoder.leaky_slope,
            ..Default::default()
        }
    }

    pub fn ae_training(&self) -> AutoencoderTraining {
        let a = &self.autoencoder;
        AutoencoderTraining {
            epochs: a.epochs,
            batch_size: a.batch_size,
            lr: a.lr,
            weight_decay: a.weight_decay,
            seed: self.seed,
        }
    }

    pub fn generator_spec(&self) -> Result<GeneratorSpec> {
        let g = &self.generator;
        Ok(GeneratorSpec::new(&g.template, g.road_bound, g.non_road_bound, g.num_scenes)?)
    }

    pub fn miss_rule(&self) -> Result<MissRule> {
        Ok(self.eval.miss_rule.parse()?)
    }
}

/// Sets `section.key` (dotted path into the document) to `value`. The value
/// is parsed as JSON when possible and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let Some((key, raw)) = assignment.split_once('=') else {
        bail!(invalid(format!("override `{assignment}` is not key=value")));
    };
    let mut node = doc;
    for part in key.split('.') {
        node = node
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| invalid(format!("unknown config key `{key}`")))?;
    }
    *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}
