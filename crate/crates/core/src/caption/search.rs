use super::decoder::{decoder_forward, DecoderParams};
use super::{CaptionError, BOS, EOS};
use crate::numerics::log_softmax_row;
use crate::Matrix;

/// Anything that scores the next token of a prefix.
pub trait StepModel {
    fn vocab_size(&self) -> usize;

    fn bos(&self) -> usize {
        BOS
    }

    fn eos(&self) -> usize {
        EOS
    }

    /// Log-probabilities of the token following `prefix` (which starts with BOS).
    fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>, CaptionError>;
}

/// A decoder bound to one visual sequence.
pub struct DecoderStep<'a> {
    pub params: &'a DecoderParams<f64>,
    pub visual: &'a Matrix,
}

impl StepModel for DecoderStep<'_> {
    fn vocab_size(&self) -> usize {
        self.params.vocab_size()
    }

    fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>, CaptionError> {
        let logits = decoder_forward(self.visual, prefix, self.params)?;
        Ok(log_softmax_row(logits.row(logits.rows() - 1), 1.0))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionHypothesis {
    /// Generated ids without BOS; the last one is EOS iff `finished`.
    pub tokens: Vec<usize>,
    /// Sum of the chosen tokens' log-probabilities.
    pub log_prob: f64,
    pub finished: bool,
}

impl CaptionHypothesis {
    /// `log_prob / token count`, EOS included.
    pub fn normalized_score(&self) -> f64 {
        self.log_prob / self.tokens.len().max(1) as f64
    }

    /// Tokens with the trailing EOS removed.
    pub fn words(&self) -> &[usize] {
        match self.tokens.split_last() {
            Some((_, rest)) if self.finished => rest,
            _ => &self.tokens,
        }
    }
}

/// Argmax at every step, ties to the lowest id.
pub fn greedy_search(model: &impl StepModel, max_len: usize) -> Result<CaptionHypothesis, CaptionError> {
    let mut prefix = vec![model.bos()];
    let mut hyp = CaptionHypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    while hyp.tokens.len() < max_len {
        let lp = model.next_log_probs(&prefix)?;
        let mut best = 0;
        for (i, &v) in lp.iter().enumerate() {
            if v > lp[best] {
                best = i;
            }
        }
        hyp.log_prob += lp[best];
        hyp.tokens.push(best);
        prefix.push(best);
        if best == model.eos() {
            hyp.finished = true;
            break;
        }
    }
    Ok(hyp)
}

/// Beam search ranked by cumulative log-probability. Candidates ending in
/// EOS leave the beam; the result is the finished hypothesis with the best
/// [`normalized_score`](CaptionHypothesis::normalized_score), or the best
/// unfinished one if nothing finished within `max_len` tokens. Ties keep the
/// earlier beam and the lower token id, so `beam_size = 1` is greedy search.
pub fn beam_search(model: &impl StepModel, beam_size: usize, max_len: usize) -> Result<CaptionHypothesis, CaptionError> {
    if beam_size == 0 {
        return Err(CaptionError::ZeroBeam);
    }
    let mut alive = vec![CaptionHypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    }];
    let mut finished: Vec<CaptionHypothesis> = Vec::new();
    for _ in 0..max_len {
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (b, hyp) in alive.iter().enumerate() {
            let mut prefix = vec![model.bos()];
            prefix.extend(&hyp.tokens);
            let lp = model.next_log_probs(&prefix)?;
            candidates.extend(lp.iter().enumerate().map(|(tok, &v)| (hyp.log_prob + v, b, tok)));
        }
        candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let mut next = Vec::with_capacity(beam_size);
        for &(score, b, tok) in candidates.iter().take(beam_size) {
            let mut tokens = alive[b].tokens.clone();
            tokens.push(tok);
            let done = tok == model.eos();
            let hyp = CaptionHypothesis {
                tokens,
                log_prob: score,
                finished: done,
            };
            if done {
                finished.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        alive = next;
        if alive.is_empty() {
            break;
        }
    }
    let pool = if finished.is_empty() { alive } else { finished };
    let mut best: Option<CaptionHypothesis> = None;
    for h in pool {
        if best.as_ref().is_none_or(|b| h.normalized_score() > b.normalized_score()) {
            best = Some(h);
        }
    }
    Ok(best.expect("beam search keeps at least one hypothesis"))
}

pub fn greedy_decode(visual: &Matrix, params: &DecoderParams<f64>, max_len: usize) -> Result<CaptionHypothesis, CaptionError> {
    greedy_search(&DecoderStep { params, visual }, max_len)
}

pub fn beam_decode(
    visual: &Matrix,
    params: &DecoderParams<f64>,
    beam_size: usize,
    max_len: usize,
) -> Result<CaptionHypothesis, CaptionError> {
    beam_search(&DecoderStep { params, visual }, beam_size, max_len)
}
