#![allow(dead_code)]

pub mod oracle;

use actgraph::caption::DecoderConfig;
use actgraph::features::{synth_dataset, CaptionRecord, FeatureBundle, Pattern, SynthDims};
use actgraph::training::TrainConfig;

/// Small model used by the training checks.
pub fn desk_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        epochs,
        attn_dim: 8,
        graph_dim: 8,
        decoder: DecoderConfig {
            d_model: 32,
            d_ff: 64,
            blocks: 2,
            max_len: 12,
        },
        ..TrainConfig::default()
    }
}

pub fn synth_split(seed: u64, videos: usize, patterns: &[Pattern]) -> (Vec<FeatureBundle>, Vec<CaptionRecord>) {
    synth_dataset(seed, videos, 8, 3, SynthDims::default(), patterns)
        .unwrap()
        .into_iter()
        .map(|s| (s.bundle, s.record))
        .unzip()
}
