//! Visual-action semantic-aware cross attention.
//!
//! Queries come from the visual-text features, keys and values from the
//! fused action features. Every query frame attends over all frames, which
//! yields one attended row per frame (`seq`) and their mean (`pooled`).

use thiserror::Error;

use crate::numerics::{Matrix, NumericsError, Scalar, Tape, Var};
use crate::temporal::{attend, constant_vars, AttentionParams, AttentionVars};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemanticError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("visual-text has {visual} frames but fused actions have {action}")]
    FrameCountMismatch { visual: usize, action: usize },
    #[error("attention scale must be positive")]
    NonPositiveScale,
}

/// Source of the attention values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValuesFrom {
    /// `V = A_fused · W_v` (default).
    #[default]
    Action,
    /// `V = C · W_v`; `W_v` then maps from the visual-text width.
    VisualText,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticParams<T> {
    pub attention: AttentionParams<T>,
    pub values_from: ValuesFrom,
}

#[derive(Clone, Copy, Debug)]
pub struct SemanticVars<T> {
    pub attention: AttentionVars<T>,
    pub values_from: ValuesFrom,
}

#[derive(Clone, Copy, Debug)]
pub struct SemanticOutput {
    pub seq: Var,
    pub pooled: Var,
    pub weights: Var,
}

/// Behaviour-semantic representations.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticActionFeatures<T> {
    /// One attended row per query frame.
    pub seq: Matrix<T>,
    /// Column mean of `seq` (1×d_v).
    pub pooled: Matrix<T>,
}

impl<T: Scalar> SemanticParams<T> {
    pub fn init(d_visual: usize, d_fused: usize, d_k: usize, d_v: usize, values_from: ValuesFrom, seed: u64) -> Self {
        let mut attention = AttentionParams::init(d_visual, d_fused, d_k, d_v, seed);
        if values_from == ValuesFrom::VisualText {
            attention.value = AttentionParams::<T>::init(d_visual, d_visual, d_k, d_v, seed ^ 0xA5).value;
        }
        Self { attention, values_from }
    }

    pub fn output_dim(&self) -> usize {
        self.attention.value_dim()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> SemanticVars<T> {
        SemanticVars {
            attention: self.attention.bind(tape),
            values_from: self.values_from,
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix<T>> {
        self.attention.params_mut()
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Matrix<T>)> {
        self.attention.named(prefix)
    }
}

impl<T: Scalar> SemanticVars<T> {
    pub fn vars(&self) -> Vec<Var> {
        self.attention.vars()
    }

    pub fn forward(&self, tape: &mut Tape<T>, visual: Var, fused: Var) -> Result<SemanticOutput, SemanticError> {
        let (tv, ta) = (tape.shape(visual).0, tape.shape(fused).0);
        if tv != ta {
            return Err(SemanticError::FrameCountMismatch { visual: tv, action: ta });
        }
        if self.attention.scale <= T::zero() {
            return Err(SemanticError::NonPositiveScale);
        }
        let value_src = match self.values_from {
            ValuesFrom::Action => fused,
            ValuesFrom::VisualText => visual,
        };
        let (seq, weights) = attend(tape, visual, fused, value_src, &self.attention, None)?;
        let pooled = tape.mean_rows(seq);
        Ok(SemanticOutput { seq, pooled, weights })
    }
}

/// Returns the semantic features and the `T × T` attention weights.
pub fn visual_action_attention<T: Scalar>(
    visual: &Matrix<T>,
    fused: &Matrix<T>,
    params: &SemanticParams<T>,
) -> Result<(SemanticActionFeatures<T>, Matrix<T>), SemanticError> {
    let mut tape = Tape::new();
    let c = tape.constant(visual.clone());
    let a = tape.constant(fused.clone());
    let vars = SemanticVars {
        attention: constant_vars(&mut tape, &params.attention),
        values_from: params.values_from,
    };
    let out = vars.forward(&mut tape, c, a)?;
    Ok((
        SemanticActionFeatures {
            seq: tape.value(out.seq).clone(),
            pooled: tape.value(out.pooled).clone(),
        },
        tape.value(out.weights).clone(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    type M = Matrix<f64>;

    fn scalar_params() -> SemanticParams<f64> {
        SemanticParams {
            attention: AttentionParams::scalar(1.0, 1.0),
            values_from: ValuesFrom::Action,
        }
    }

    #[test]
    fn single_frame() {
        let p = SemanticParams::<f64>::init(3, 4, 2, 2, ValuesFrom::Action, 5);
        let c = M::from_f64_rows(&[&[1.0, 2.0, 3.0]]).unwrap();
        let a = M::from_f64_rows(&[&[0.5, -0.5, 1.0, 0.0]]).unwrap();
        let (f, w) = visual_action_attention(&c, &a, &p).unwrap();
        assert_eq!(w.data(), &[1.0]);
        assert_eq!(f.seq, a.matmul(&p.attention.value).unwrap());
        assert_eq!(f.pooled, f.seq);
    }

    #[test]
    fn constant_actions_ignore_visual() {
        let p = SemanticParams::<f64>::init(2, 3, 2, 2, ValuesFrom::Action, 6);
        let c = M::from_fn(4, 2, |r, c| (r as f64 - c as f64) * 0.7);
        let a = M::from_fn(4, 3, |_, c| c as f64 - 1.0);
        let (f, _) = visual_action_attention(&c, &a, &p).unwrap();
        for r in 1..4 {
            assert_eq!(f.seq.row(r), f.seq.row(0));
        }
    }

    #[test]
    fn scalar_hand_evaluation() {
        let c = M::from_f64_rows(&[&[0.0], &[0.0]]).unwrap();
        let a = M::from_f64_rows(&[&[1.0], &[3.0]]).unwrap();
        let (f, w) = visual_action_attention(&c, &a, &scalar_params()).unwrap();
        assert!(w.data().iter().all(|&v| v == 0.5));
        assert!(f.seq.data().iter().all(|&v| v == 2.0));
        assert_eq!(f.pooled.data(), &[2.0]);
    }

    #[test]
    fn frame_mismatch() {
        let c = M::zeros(2, 1);
        let a = M::zeros(3, 1);
        assert_eq!(
            visual_action_attention(&c, &a, &scalar_params()),
            Err(SemanticError::FrameCountMismatch { visual: 2, action: 3 })
        );
    }

    #[test]
    fn values_from_visual_text() {
        let p = SemanticParams::<f64>::init(3, 5, 2, 2, ValuesFrom::VisualText, 7);
        assert_eq!(p.attention.value.rows(), 3);
        let c = M::from_fn(3, 3, |r, c| (r * 3 + c) as f64 * 0.1);
        let a = M::from_fn(3, 5, |r, c| ((r + c) as f64).cos());
        let (f, _) = visual_action_attention(&c, &a, &p).unwrap();
        assert_eq!(f.seq.shape(), (3, 2));
    }
}
