use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::caption::DecoderConfig;
use crate::graph::{GraphNorm, LinkConfig};
use crate::semantic::ValuesFrom;
use crate::temporal::WindowConfig;

/// Every field is optional in JSON; unknown fields are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub lambda_kd: f64,
    pub temperature: f64,
    pub seed: u64,
    pub window: WindowConfig,
    pub link: LinkConfig,
    pub graph_layers: usize,
    pub graph_norm: GraphNorm,
    /// Key and value width of the temporal and semantic attention.
    pub attn_dim: usize,
    pub graph_dim: usize,
    pub values_from: ValuesFrom,
    pub decoder: DecoderConfig,
    pub min_freq: usize,
    pub disable_temporal: bool,
    pub disable_semantic: bool,
    /// Write intermediate checkpoints every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            epochs: 500,
            lambda_kd: 1.0,
            temperature: 1.0,
            seed: 0,
            window: WindowConfig::default(),
            link: LinkConfig::default(),
            graph_layers: 1,
            graph_norm: GraphNorm::LayerNorm,
            attn_dim: 16,
            graph_dim: 16,
            values_from: ValuesFrom::Action,
            decoder: DecoderConfig::default(),
            min_freq: 1,
            disable_temporal: false,
            disable_semantic: false,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.lambda_kd >= 0.0 && self.lambda_kd.is_finite()) {
            return bad("lambda_kd must be non-negative");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if self.graph_layers == 0 {
            return bad("graph_layers must be at least 1");
        }
        if self.attn_dim == 0 || self.graph_dim == 0 {
            return bad("attn_dim and graph_dim must be positive");
        }
        let d = &self.decoder;
        if d.d_model == 0 || d.d_ff == 0 || d.blocks == 0 || d.max_len < 2 {
            return bad("decoder needs positive widths, at least one block and max_len >= 2");
        }
        if self.min_freq == 0 {
            return bad("min_freq must be at least 1");
        }
        if !self.window.include_self && self.window.radius == 0 {
            return bad("window radius 0 requires include_self");
        }
        if self.values_from == ValuesFrom::VisualText && self.disable_semantic {
            return bad("values_from has no effect with disable_semantic");
        }
        Ok(())
    }

    /// Name of the active ablation for logs.
    pub fn ablation(&self) -> &'static str {
        match (self.disable_temporal, self.disable_semantic) {
            (false, false) => "none",
            (true, false) => "temporal",
            (false, true) => "semantic",
            (true, true) => "temporal+semantic",
        }
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
