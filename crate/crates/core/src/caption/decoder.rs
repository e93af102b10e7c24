//! Transformer caption decoder.
//!
//! The visual sequence is projected to the model width and serves as memory.
//! Each block runs causal self-attention over the token prefix,
//! cross-attention into the memory and a ReLU feed-forward layer, each
//! followed by a residual connection and layer normalisation.

use serde::{Deserialize, Serialize};

use super::CaptionError;
use crate::numerics::{derive_seed, seeded_init, InitScheme, Matrix, Scalar, Tape, Var};
use crate::temporal::{attend, AttentionVars};

pub const NORM_EPS: f64 = 1e-5;

/// Token embeddings are drawn uniformly from this range.
const EMBED_INIT: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub blocks: usize,
    pub max_len: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            d_ff: 256,
            blocks: 2,
            max_len: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderBlockParams<T> {
    pub self_q: Matrix<T>,
    pub self_k: Matrix<T>,
    pub self_v: Matrix<T>,
    pub self_o: Matrix<T>,
    pub cross_q: Matrix<T>,
    pub cross_k: Matrix<T>,
    pub cross_v: Matrix<T>,
    pub cross_o: Matrix<T>,
    pub ff_in: Matrix<T>,
    pub ff_in_bias: Matrix<T>,
    pub ff_out: Matrix<T>,
    pub ff_out_bias: Matrix<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams<T> {
    /// Visual width → model width.
    pub input_proj: Matrix<T>,
    /// `|V| × d_model`.
    pub embedding: Matrix<T>,
    pub blocks: Vec<DecoderBlockParams<T>>,
    pub output: Matrix<T>,
    pub output_bias: Matrix<T>,
    pub max_len: usize,
}

#[derive(Clone, Debug)]
struct BlockVars {
    self_q: Var,
    self_k: Var,
    self_v: Var,
    self_o: Var,
    cross_q: Var,
    cross_k: Var,
    cross_v: Var,
    cross_o: Var,
    ff_in: Var,
    ff_in_bias: Var,
    ff_out: Var,
    ff_out_bias: Var,
}

/// [`DecoderParams`] registered on a tape.
#[derive(Clone, Debug)]
pub struct DecoderVars<T> {
    input_proj: Var,
    embedding: Var,
    blocks: Vec<BlockVars>,
    output: Var,
    output_bias: Var,
    max_len: usize,
    d_model: usize,
    scale: T,
}

impl<T: Scalar> DecoderBlockParams<T> {
    fn init(d: usize, ff: usize, seed: u64) -> Self {
        let w = |r, c, s| seeded_init(r, c, derive_seed(seed, s), InitScheme::FanIn);
        Self {
            self_q: w(d, d, 0),
            self_k: w(d, d, 1),
            self_v: w(d, d, 2),
            self_o: w(d, d, 3),
            cross_q: w(d, d, 4),
            cross_k: w(d, d, 5),
            cross_v: w(d, d, 6),
            cross_o: w(d, d, 7),
            ff_in: w(d, ff, 8),
            ff_in_bias: Matrix::zeros(1, ff),
            ff_out: w(ff, d, 9),
            ff_out_bias: Matrix::zeros(1, d),
        }
    }

    fn all(&self) -> [&Matrix<T>; 12] {
        [
            &self.self_q,
            &self.self_k,
            &self.self_v,
            &self.self_o,
            &self.cross_q,
            &self.cross_k,
            &self.cross_v,
            &self.cross_o,
            &self.ff_in,
            &self.ff_in_bias,
            &self.ff_out,
            &self.ff_out_bias,
        ]
    }

    fn all_mut(&mut self) -> [&mut Matrix<T>; 12] {
        [
            &mut self.self_q,
            &mut self.self_k,
            &mut self.self_v,
            &mut self.self_o,
            &mut self.cross_q,
            &mut self.cross_k,
            &mut self.cross_v,
            &mut self.cross_o,
            &mut self.ff_in,
            &mut self.ff_in_bias,
            &mut self.ff_out,
            &mut self.ff_out_bias,
        ]
    }
}

const BLOCK_NAMES: [&str; 12] = [
    "self_q",
    "self_k",
    "self_v",
    "self_o",
    "cross_q",
    "cross_k",
    "cross_v",
    "cross_o",
    "ff_in",
    "ff_in_bias",
    "ff_out",
    "ff_out_bias",
];

impl<T: Scalar> DecoderParams<T> {
    pub fn init(d_visual: usize, vocab: usize, cfg: &DecoderConfig, seed: u64) -> Self {
        let d = cfg.d_model;
        Self {
            input_proj: seeded_init(d_visual, d, derive_seed(seed, 0), InitScheme::FanIn),
            embedding: seeded_init(vocab, d, derive_seed(seed, 1), InitScheme::Uniform(EMBED_INIT)),
            blocks: (0..cfg.blocks)
                .map(|b| DecoderBlockParams::init(d, cfg.d_ff, derive_seed(seed, 100 + b as u64)))
                .collect(),
            output: seeded_init(d, vocab, derive_seed(seed, 2), InitScheme::FanIn),
            output_bias: Matrix::zeros(1, vocab),
            max_len: cfg.max_len,
        }
    }

    pub fn d_model(&self) -> usize {
        self.embedding.cols()
    }

    pub fn d_visual(&self) -> usize {
        self.input_proj.rows()
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> DecoderVars<T> {
        self.bind_with(tape, |t, m| t.param(m))
    }

    pub fn bind_constant(&self, tape: &mut Tape<T>) -> DecoderVars<T> {
        self.bind_with(tape, |t, m| t.constant(m))
    }

    fn bind_with(&self, tape: &mut Tape<T>, mut leaf: impl FnMut(&mut Tape<T>, Matrix<T>) -> Var) -> DecoderVars<T> {
        let input_proj = leaf(tape, self.input_proj.clone());
        let embedding = leaf(tape, self.embedding.clone());
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let v: Vec<Var> = b.all().into_iter().map(|m| leaf(tape, m.clone())).collect();
                BlockVars {
                    self_q: v[0],
                    self_k: v[1],
                    self_v: v[2],
                    self_o: v[3],
                    cross_q: v[4],
                    cross_k: v[5],
                    cross_v: v[6],
                    cross_o: v[7],
                    ff_in: v[8],
                    ff_in_bias: v[9],
                    ff_out: v[10],
                    ff_out_bias: v[11],
                }
            })
            .collect();
        let output = leaf(tape, self.output.clone());
        let output_bias = leaf(tape, self.output_bias.clone());
        DecoderVars {
            input_proj,
            embedding,
            blocks,
            output,
            output_bias,
            max_len: self.max_len,
            d_model: self.d_model(),
            scale: T::from_usize(self.d_model()).unwrap(),
        }
    }

    /// Parameter matrices in the same order as [`DecoderVars::vars`] and [`named`](Self::named).
    pub fn params_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut v = vec![&mut self.input_proj, &mut self.embedding];
        for b in &mut self.blocks {
            v.extend(b.all_mut());
        }
        v.push(&mut self.output);
        v.push(&mut self.output_bias);
        v
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Matrix<T>)> {
        let mut v = vec![
            (format!("{prefix}.input_proj"), &self.input_proj),
            (format!("{prefix}.embedding"), &self.embedding),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, m) in BLOCK_NAMES.iter().zip(b.all()) {
                v.push((format!("{prefix}.block{i}.{name}"), m));
            }
        }
        v.push((format!("{prefix}.output"), &self.output));
        v.push((format!("{prefix}.output_bias"), &self.output_bias));
        v
    }
}

/// `pe[pos, 2i] = sin(pos / 10000^(2i/d))`, `pe[pos, 2i+1] = cos(…)`.
pub fn positional_encoding<T: Scalar>(len: usize, d: usize) -> Matrix<T> {
    Matrix::from_fn(len, d, |pos, c| {
        let i = (c / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * i / d as f64);
        T::lit(if c % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// Row-major `len × len` mask allowing positions `j ≤ i`.
pub fn causal_mask(len: usize) -> Vec<bool> {
    (0..len * len).map(|k| k % len <= k / len).collect()
}

impl<T: Scalar> DecoderVars<T> {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = vec![self.input_proj, self.embedding];
        for b in &self.blocks {
            v.extend([
                b.self_q,
                b.self_k,
                b.self_v,
                b.self_o,
                b.cross_q,
                b.cross_k,
                b.cross_v,
                b.cross_o,
                b.ff_in,
                b.ff_in_bias,
                b.ff_out,
                b.ff_out_bias,
            ]);
        }
        v.push(self.output);
        v.push(self.output_bias);
        v
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Logits `L × |V|` for the token prefix given the visual sequence.
    pub fn forward(&self, tape: &mut Tape<T>, visual: Var, prefix: &[usize]) -> Result<Var, CaptionError> {
        let len = prefix.len();
        if len == 0 {
            return Err(CaptionError::EmptyPrefix);
        }
        if len > self.max_len {
            return Err(CaptionError::PrefixTooLong { len, max: self.max_len });
        }
        if tape.shape(visual).0 == 0 {
            return Err(CaptionError::EmptyVisualSequence);
        }
        let vocab = tape.shape(self.embedding).0;
        if let Some(&bad) = prefix.iter().find(|&&t| t >= vocab) {
            return Err(CaptionError::TokenOutOfRange { token: bad, vocab });
        }
        let memory = tape.matmul(visual, self.input_proj)?;
        let emb = tape.gather_rows(self.embedding, prefix)?;
        let pe = tape.constant(positional_encoding(len, self.d_model));
        let mut x = tape.add(emb, pe)?;
        let mask = causal_mask(len);
        let eps = T::lit(NORM_EPS);
        for b in &self.blocks {
            let sa = AttentionVars {
                query: b.self_q,
                key: b.self_k,
                value: b.self_v,
                scale: self.scale,
            };
            let (a, _) = attend(tape, x, x, x, &sa, Some(&mask))?;
            let a = tape.matmul(a, b.self_o)?;
            let r = tape.add(x, a)?;
            x = tape.layer_norm(r, eps);

            let ca = AttentionVars {
                query: b.cross_q,
                key: b.cross_k,
                value: b.cross_v,
                scale: self.scale,
            };
            let (c, _) = attend(tape, x, memory, memory, &ca, None)?;
            let c = tape.matmul(c, b.cross_o)?;
            let r = tape.add(x, c)?;
            x = tape.layer_norm(r, eps);

            let h = tape.matmul(x, b.ff_in)?;
            let h = tape.add_row(h, b.ff_in_bias)?;
            let h = tape.relu(h);
            let f = tape.matmul(h, b.ff_out)?;
            let f = tape.add_row(f, b.ff_out_bias)?;
            let r = tape.add(x, f)?;
            x = tape.layer_norm(r, eps);
        }
        let logits = tape.matmul(x, self.output)?;
        Ok(tape.add_row(logits, self.output_bias)?)
    }
}

/// Logits for `prefix` without recording gradients.
pub fn decoder_forward<T: Scalar>(
    visual: &Matrix<T>,
    prefix: &[usize],
    params: &DecoderParams<T>,
) -> Result<Matrix<T>, CaptionError> {
    let mut tape = Tape::new();
    let vars = params.bind_constant(&mut tape);
    let v = tape.constant(visual.clone());
    let out = vars.forward(&mut tape, v, prefix)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caption::BOS;

    fn small() -> (DecoderParams<f64>, Matrix<f64>) {
        let cfg = DecoderConfig {
            d_model: 8,
            d_ff: 12,
            blocks: 2,
            max_len: 6,
        };
        let p = DecoderParams::init(3, 7, &cfg, 42);
        let v = Matrix::from_fn(4, 3, |r, c| ((r * 3 + c) as f64 * 0.7).sin());
        (p, v)
    }

    #[test]
    fn prefix_causality_is_bitwise() {
        let (p, v) = small();
        let a = decoder_forward(&v, &[BOS, 4, 5, 6], &p).unwrap();
        let b = decoder_forward(&v, &[BOS, 4, 2, 3], &p).unwrap();
        for r in 0..2 {
            assert_eq!(a.row(r), b.row(r));
        }
        assert_ne!(a.row(2), b.row(2));
    }

    #[test]
    fn cross_attention_is_live() {
        let (p, v) = small();
        let a = decoder_forward(&v, &[BOS, 4], &p).unwrap();
        let b = decoder_forward(&Matrix::zeros(4, 3), &[BOS, 4], &p).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn shapes_and_limits() {
        let (p, v) = small();
        assert_eq!(decoder_forward(&v, &[BOS], &p).unwrap().shape(), (1, 7));
        assert_eq!(
            decoder_forward(&v, &[BOS; 7], &p),
            Err(CaptionError::PrefixTooLong { len: 7, max: 6 })
        );
        assert_eq!(decoder_forward(&v, &[], &p), Err(CaptionError::EmptyPrefix));
        assert_eq!(
            decoder_forward(&Matrix::zeros(0, 3), &[BOS], &p),
            Err(CaptionError::EmptyVisualSequence)
        );
        assert!(matches!(
            decoder_forward(&v, &[BOS, 9], &p),
            Err(CaptionError::TokenOutOfRange { .. })
        ));
    }

    #[test]
    fn causal_mask_shape() {
        assert_eq!(causal_mask(2), vec![true, false, true, true]);
    }

    #[test]
    fn param_lists_line_up() {
        let (mut p, _) = small();
        let mut tape = Tape::new();
        let n = p.bind(&mut tape).vars().len();
        assert_eq!(p.named("d").len(), n);
        assert_eq!(p.params_mut().len(), n);
    }
}
