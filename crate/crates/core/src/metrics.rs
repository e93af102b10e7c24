//! Corpus caption metrics: BLEU-4, ROUGE-L and CIDEr-D.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caption::tokenize;
use crate::features::CaptionRecord;

pub const BLEU_ORDER: usize = 4;
pub const BLEU_EPSILON: f64 = 1e-9;
pub const ROUGE_BETA: f64 = 1.2;
pub const CIDER_ORDER: usize = 4;
pub const CIDER_SIGMA: f64 = 6.0;
pub const CIDER_SCALE: f64 = 10.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no candidate/reference pairs to score")]
    EmptyCorpus,
    #[error("CIDEr needs at least 2 distinct videos for document frequencies, got {0}")]
    CorpusTooSmall(usize),
    #[error("video {0:?}: candidate caption is empty after tokenization")]
    EmptyCandidate(String),
    #[error("video {0:?}: no nonempty reference captions")]
    EmptyReferences(String),
    #[error("video {0:?}: no reference record")]
    MissingReferences(String),
    #[error("video {0:?}: more than one candidate")]
    DuplicateCandidate(String),
}

/// One candidate against its references, already tokenized.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPair {
    pub video_id: String,
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl EvalPair {
    pub fn new(video_id: impl Into<String>, candidate: &str, references: &[String]) -> Result<Self, MetricsError> {
        let video_id = video_id.into();
        let candidate = tokenize(candidate);
        if candidate.is_empty() {
            return Err(MetricsError::EmptyCandidate(video_id));
        }
        let references: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).filter(|r| !r.is_empty()).collect();
        if references.is_empty() {
            return Err(MetricsError::EmptyReferences(video_id));
        }
        Ok(Self {
            video_id,
            candidate,
            references,
        })
    }
}

/// Generated caption of one video; one JSON object per line on disk.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateRecord {
    pub video_id: String,
    pub caption: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemScore {
    pub video_id: String,
    pub rouge_l: f64,
    pub cider: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub items: Vec<ItemScore>,
}

/// JSON schema of the `eval` report.
pub const REPORT_SCHEMA: &str = r#"{
  "type": "object",
  "required": ["bleu4", "rouge_l", "cider", "items"],
  "additionalProperties": false,
  "properties": {
    "bleu4": {"type": "number", "minimum": 0, "maximum": 1},
    "rouge_l": {"type": "number", "minimum": 0, "maximum": 1},
    "cider": {"type": "number", "minimum": 0, "maximum": 10},
    "items": {
      "type": "array",
      "items": {
        "type": "object",
        "required": ["video_id", "rouge_l", "cider"],
        "additionalProperties": false,
        "properties": {
          "video_id": {"type": "string"},
          "rouge_l": {"type": "number", "minimum": 0, "maximum": 1},
          "cider": {"type": "number", "minimum": 0, "maximum": 10}
        }
      }
    }
  }
}"#;

type NGram<'a> = &'a [String];

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<NGram<'_>, usize> {
    let mut out = BTreeMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *out.entry(g).or_insert(0) += 1;
        }
    }
    out
}

/// Mean that does not depend on the order of `values`.
fn order_free_mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Reference length closest to `c`, the shorter one on ties.
fn closest_ref_len(c: usize, refs: &[Vec<String>]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .expect("references are nonempty")
}

/// Clipped matches and candidate n-gram total of one item.
pub fn clipped_counts(candidate: &[String], references: &[Vec<String>], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let mut max_ref: HashMap<NGram<'_>, usize> = HashMap::new();
    for r in references {
        for (g, c) in ngram_counts(r, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let matched = cand.iter().map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0))).sum();
    (matched, candidate.len().saturating_sub(n - 1))
}

/// Corpus BLEU-4 with brevity penalty.
pub fn bleu4(pairs: &[EvalPair]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut log_sum = 0.0;
    for n in 1..=BLEU_ORDER {
        let (m, t) = pairs.iter().fold((0usize, 0usize), |(m, t), p| {
            let (pm, pt) = clipped_counts(&p.candidate, &p.references, n);
            (m + pm, t + pt)
        });
        let numerator = if m == 0 { BLEU_EPSILON } else { m as f64 };
        log_sum += (numerator / t.max(1) as f64).ln();
    }
    let c: usize = pairs.iter().map(|p| p.candidate.len()).sum();
    let r: usize = pairs.iter().map(|p| closest_ref_len(p.candidate.len(), &p.references)).sum();
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    Ok(bp * (log_sum / BLEU_ORDER as f64).exp())
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure, best reference.
pub fn rouge_l(pair: &EvalPair) -> f64 {
    let b2 = ROUGE_BETA * ROUGE_BETA;
    pair.references
        .iter()
        .map(|r| {
            let l = lcs_len(&pair.candidate, r) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let p = l / pair.candidate.len() as f64;
            let rec = l / r.len() as f64;
            (1.0 + b2) * p * rec / (rec + b2 * p)
        })
        .fold(0.0, f64::max)
}

pub fn rouge_l_corpus(pairs: &[EvalPair]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    Ok(order_free_mean(pairs.iter().map(rouge_l).collect()))
}

/// Number of videos whose references contain each n-gram.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DocFreq {
    pub videos: usize,
    pub counts: HashMap<Vec<String>, usize>,
}

impl DocFreq {
    pub fn from_pairs(pairs: &[EvalPair]) -> Self {
        let mut counts = HashMap::new();
        for p in pairs {
            let mut seen: HashSet<&[String]> = HashSet::new();
            for r in &p.references {
                for n in 1..=CIDER_ORDER {
                    if r.len() >= n {
                        seen.extend(r.windows(n));
                    }
                }
            }
            for g in seen {
                *counts.entry(g.to_vec()).or_insert(0) += 1;
            }
        }
        Self {
            videos: pairs.len(),
            counts,
        }
    }

    pub fn idf(&self, gram: &[String]) -> f64 {
        let df = self.counts.get(gram).copied().unwrap_or(0).max(1);
        (self.videos as f64 / df as f64).ln()
    }
}

struct TfIdf<'a> {
    /// Per order: n-gram weight and vector norm.
    orders: Vec<(BTreeMap<NGram<'a>, f64>, f64)>,
    len: usize,
}

fn tf_idf<'a>(tokens: &'a [String], df: &DocFreq) -> TfIdf<'a> {
    let orders = (1..=CIDER_ORDER)
        .map(|n| {
            let v: BTreeMap<NGram<'a>, f64> =
                ngram_counts(tokens, n).into_iter().map(|(g, c)| (g, c as f64 * df.idf(g))).collect();
            let norm = v.values().map(|x| x * x).sum::<f64>().sqrt();
            (v, norm)
        })
        .collect();
    TfIdf {
        orders,
        len: tokens.len(),
    }
}

fn cider_similarity(cand: &TfIdf<'_>, reference: &TfIdf<'_>) -> f64 {
    let delta = cand.len as f64 - reference.len as f64;
    let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut total = 0.0;
    for ((cv, cn), (rv, rn)) in cand.orders.iter().zip(&reference.orders) {
        if *cn == 0.0 || *rn == 0.0 {
            continue;
        }
        let dot: f64 = cv
            .iter()
            .map(|(g, &w)| rv.get(g).map_or(0.0, |&rw| w.min(rw) * rw))
            .sum();
        total += dot / (cn * rn) * penalty;
    }
    total / CIDER_ORDER as f64
}

/// CIDEr-D of one pair under a given document-frequency table.
pub fn cider_item(pair: &EvalPair, df: &DocFreq) -> f64 {
    let cand = tf_idf(&pair.candidate, df);
    let sum: f64 = pair.references.iter().map(|r| cider_similarity(&cand, &tf_idf(r, df))).sum();
    CIDER_SCALE * sum / pair.references.len() as f64
}

/// Corpus CIDEr-D and per-item scores, document frequencies from the pairs.
pub fn cider(pairs: &[EvalPair]) -> Result<(f64, Vec<f64>), MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    if pairs.len() < 2 {
        return Err(MetricsError::CorpusTooSmall(pairs.len()));
    }
    let df = DocFreq::from_pairs(pairs);
    let items: Vec<f64> = pairs.iter().map(|p| cider_item(p, &df)).collect();
    Ok((order_free_mean(items.clone()), items))
}

/// Pairs candidates with their references; per-item order follows video id.
pub fn make_pairs(candidates: &[CandidateRecord], references: &[CaptionRecord]) -> Result<Vec<EvalPair>, MetricsError> {
    if candidates.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let refs: HashMap<&str, &CaptionRecord> = references.iter().map(|r| (r.video_id.as_str(), r)).collect();
    let mut by_id = BTreeMap::new();
    for c in candidates {
        let r = refs
            .get(c.video_id.as_str())
            .ok_or_else(|| MetricsError::MissingReferences(c.video_id.clone()))?;
        let pair = EvalPair::new(c.video_id.clone(), &c.caption, &r.captions)?;
        if by_id.insert(c.video_id.clone(), pair).is_some() {
            return Err(MetricsError::DuplicateCandidate(c.video_id.clone()));
        }
    }
    Ok(by_id.into_values().collect())
}

pub fn evaluate_pairs(pairs: &[EvalPair]) -> Result<MetricReport, MetricsError> {
    let bleu4 = bleu4(pairs)?;
    let (cider, ciders) = cider(pairs)?;
    let rouges: Vec<f64> = pairs.iter().map(rouge_l).collect();
    let items = pairs
        .iter()
        .zip(&rouges)
        .zip(ciders)
        .map(|((p, &r), c)| ItemScore {
            video_id: p.video_id.clone(),
            rouge_l: r,
            cider: c,
        })
        .collect();
    Ok(MetricReport {
        bleu4,
        rouge_l: order_free_mean(rouges),
        cider,
        items,
    })
}

pub fn evaluate(candidates: &[CandidateRecord], references: &[CaptionRecord]) -> Result<MetricReport, MetricsError> {
    evaluate_pairs(&make_pairs(candidates, references)?)
}
