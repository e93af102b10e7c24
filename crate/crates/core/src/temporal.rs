//! Multi-scale temporal modeling over latent action features.
//!
//! Long-term attention lets every frame attend over the whole sequence;
//! short-term attention restricts each frame to a window of neighbours. The
//! two outputs are concatenated per frame into the fused action features.

use thiserror::Error;

use crate::numerics::{derive_seed, seeded_init, InitScheme, Matrix, NumericsError, Scalar, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemporalError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("short-term window is empty (radius 0 without the frame itself)")]
    EmptyWindow,
    #[error("attention scale must be positive")]
    NonPositiveScale,
    #[error("query and key projections disagree: {0:?} vs {1:?}")]
    ProjectionMismatch((usize, usize), (usize, usize)),
}

/// A learnable (W_q, W_k, W_v) triple with its softmax scale; the logits are
/// divided by `√scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T> {
    pub query: Matrix<T>,
    pub key: Matrix<T>,
    pub value: Matrix<T>,
    pub scale: T,
}

/// [`AttentionParams`] registered on a tape.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars<T> {
    pub query: Var,
    pub key: Var,
    pub value: Var,
    pub scale: T,
}

impl<T: Scalar> AttentionParams<T> {
    pub fn new(query: Matrix<T>, key: Matrix<T>, value: Matrix<T>, scale: T) -> Result<Self, TemporalError> {
        if !(scale > T::zero()) {
            return Err(TemporalError::NonPositiveScale);
        }
        if query.cols() != key.cols() {
            return Err(TemporalError::ProjectionMismatch(query.shape(), key.shape()));
        }
        Ok(Self { query, key, value, scale })
    }

    /// Fan-in scaled random init with `scale = d_k`.
    pub fn init(query_in: usize, kv_in: usize, d_k: usize, d_v: usize, seed: u64) -> Self {
        Self {
            query: seeded_init(query_in, d_k, derive_seed(seed, 0), InitScheme::FanIn),
            key: seeded_init(kv_in, d_k, derive_seed(seed, 1), InitScheme::FanIn),
            value: seeded_init(kv_in, d_v, derive_seed(seed, 2), InitScheme::FanIn),
            scale: T::from_usize(d_k).unwrap(),
        }
    }

    /// Scalar-dimension params with all three weights equal to `w`.
    pub fn scalar(w: T, scale: T) -> Self {
        let m = Matrix::filled(1, 1, w);
        Self { query: m.clone(), key: m.clone(), value: m, scale }
    }

    pub fn key_dim(&self) -> usize {
        self.query.cols()
    }

    pub fn value_dim(&self) -> usize {
        self.value.cols()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> AttentionVars<T> {
        AttentionVars {
            query: tape.param(self.query.clone()),
            key: tape.param(self.key.clone()),
            value: tape.param(self.value.clone()),
            scale: self.scale,
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix<T>> {
        vec![&mut self.query, &mut self.key, &mut self.value]
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Matrix<T>)> {
        vec![
            (format!("{prefix}.query"), &self.query),
            (format!("{prefix}.key"), &self.key),
            (format!("{prefix}.value"), &self.value),
        ]
    }
}

impl<T> AttentionVars<T> {
    pub fn vars(&self) -> Vec<Var> {
        vec![self.query, self.key, self.value]
    }
}

/// Scaled dot-product attention on the tape: queries come from `query_src`,
/// keys from `key_src`, values from `value_src`. Returns `(output, weights)`.
pub fn attend<T: Scalar>(
    tape: &mut Tape<T>,
    query_src: Var,
    key_src: Var,
    value_src: Var,
    params: &AttentionVars<T>,
    mask: Option<&[bool]>,
) -> Result<(Var, Var), NumericsError> {
    let q = tape.matmul(query_src, params.query)?;
    let k = tape.matmul(key_src, params.key)?;
    let v = tape.matmul(value_src, params.value)?;
    let scores = tape.matmul_transposed(q, k)?;
    let weights = tape.softmax_rows(scores, params.scale, mask)?;
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

/// Neighbourhood of the short-term attention: frames `j` with `|i − j| ≤ radius`,
/// the frame itself only when `include_self` is set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct WindowConfig {
    pub radius: usize,
    pub include_self: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            radius: 1,
            include_self: true,
        }
    }
}

impl WindowConfig {
    /// Row-major `frames × frames` mask, `true` where attention is allowed.
    pub fn mask(&self, frames: usize) -> Result<Vec<bool>, TemporalError> {
        let mut mask = vec![false; frames * frames];
        for i in 0..frames {
            let lo = i.saturating_sub(self.radius);
            let hi = (i + self.radius).min(frames.saturating_sub(1));
            let mut any = false;
            for j in lo..=hi {
                if j != i || self.include_self {
                    mask[i * frames + j] = true;
                    any = true;
                }
            }
            if !any {
                return Err(TemporalError::EmptyWindow);
            }
        }
        Ok(mask)
    }
}

/// Long-term and short-term attention parameters plus the window.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalParams<T> {
    pub long: AttentionParams<T>,
    pub short: AttentionParams<T>,
    pub window: WindowConfig,
}

#[derive(Clone, Copy, Debug)]
pub struct TemporalVars<T> {
    pub long: AttentionVars<T>,
    pub short: AttentionVars<T>,
    pub window: WindowConfig,
}

/// Tape outputs of the temporal module.
#[derive(Clone, Copy, Debug)]
pub struct TemporalOutput {
    pub fused: Var,
    pub long: Var,
    pub short: Var,
    pub long_weights: Var,
    pub short_weights: Var,
}

impl<T: Scalar> TemporalParams<T> {
    /// Both branches share `d_k` and `d_v` so the fused halves line up.
    pub fn init(d_action: usize, d_k: usize, d_v: usize, window: WindowConfig, seed: u64) -> Self {
        Self {
            long: AttentionParams::init(d_action, d_action, d_k, d_v, derive_seed(seed, 10)),
            short: AttentionParams::init(d_action, d_action, d_k, d_v, derive_seed(seed, 11)),
            window,
        }
    }

    pub fn fused_dim(&self) -> usize {
        self.long.value_dim() + self.short.value_dim()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> TemporalVars<T> {
        TemporalVars {
            long: self.long.bind(tape),
            short: self.short.bind(tape),
            window: self.window,
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut v = self.long.params_mut();
        v.extend(self.short.params_mut());
        v
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Matrix<T>)> {
        let mut v = self.long.named(&format!("{prefix}.long"));
        v.extend(self.short.named(&format!("{prefix}.short")));
        v
    }
}

impl<T: Scalar> TemporalVars<T> {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.long.vars();
        v.extend(self.short.vars());
        v
    }

    /// Long-term, short-term and fusion on an action sequence node.
    pub fn forward(&self, tape: &mut Tape<T>, actions: Var) -> Result<TemporalOutput, TemporalError> {
        if self.long.scale <= T::zero() || self.short.scale <= T::zero() {
            return Err(TemporalError::NonPositiveScale);
        }
        let frames = tape.shape(actions).0;
        let (long, long_weights) = attend(tape, actions, actions, actions, &self.long, None)?;
        let mask = self.window.mask(frames)?;
        let (short, short_weights) = attend(tape, actions, actions, actions, &self.short, Some(&mask))?;
        let fused = tape.concat_rows(long, short)?;
        Ok(TemporalOutput {
            fused,
            long,
            short,
            long_weights,
            short_weights,
        })
    }
}

/// Concatenated long/short features; the left block is the long-term half.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedActionFeatures<T> {
    pub fused: Matrix<T>,
    pub long_dim: usize,
}

impl<T: Scalar> FusedActionFeatures<T> {
    pub fn long(&self) -> Matrix<T> {
        self.fused.slice_cols(0, self.long_dim).expect("long block in range")
    }

    pub fn short(&self) -> Matrix<T> {
        self.fused
            .slice_cols(self.long_dim, self.fused.cols() - self.long_dim)
            .expect("short block in range")
    }
}

/// Returns `(M_long, weights)`.
pub fn long_term_attention<T: Scalar>(
    actions: &Matrix<T>,
    params: &AttentionParams<T>,
) -> Result<(Matrix<T>, Matrix<T>), TemporalError> {
    if params.scale <= T::zero() {
        return Err(TemporalError::NonPositiveScale);
    }
    let mut tape = Tape::new();
    let m = tape.constant(actions.clone());
    let p = constant_vars(&mut tape, params);
    let (out, w) = attend(&mut tape, m, m, m, &p, None)?;
    Ok((tape.value(out).clone(), tape.value(w).clone()))
}

/// Returns `(M_short, weights)`; weights outside the window are exactly zero.
pub fn short_term_attention<T: Scalar>(
    actions: &Matrix<T>,
    params: &AttentionParams<T>,
    window: WindowConfig,
) -> Result<(Matrix<T>, Matrix<T>), TemporalError> {
    if params.scale <= T::zero() {
        return Err(TemporalError::NonPositiveScale);
    }
    let mask = window.mask(actions.rows())?;
    let mut tape = Tape::new();
    let m = tape.constant(actions.clone());
    let p = constant_vars(&mut tape, params);
    let (out, w) = attend(&mut tape, m, m, m, &p, Some(&mask))?;
    Ok((tape.value(out).clone(), tape.value(w).clone()))
}

pub fn fuse_long_short<T: Scalar>(
    long: &Matrix<T>,
    short: &Matrix<T>,
) -> Result<FusedActionFeatures<T>, TemporalError> {
    if long.shape() != short.shape() {
        return Err(NumericsError::DimensionMismatch {
            op: "fuse_long_short",
            left: long.shape(),
            right: short.shape(),
        }
        .into());
    }
    Ok(FusedActionFeatures {
        fused: long.concat_rows(short)?,
        long_dim: long.cols(),
    })
}

pub(crate) fn constant_vars<T: Scalar>(tape: &mut Tape<T>, p: &AttentionParams<T>) -> AttentionVars<T> {
    AttentionVars {
        query: tape.constant(p.query.clone()),
        key: tape.constant(p.key.clone()),
        value: tape.constant(p.value.clone()),
        scale: p.scale,
    }
}
