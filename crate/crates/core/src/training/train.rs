use std::fmt::Write as _;
use std::path::Path;

use super::model::{student_init, FeatureDims, ModelCard, TeacherParams};
use super::optim::Adam;
use super::{TrainConfig, TrainError};
use crate::caption::{build_vocab, greedy_decode, DecoderParams, DecoderVars, Vocabulary, BOS, EOS, PAD};
use crate::features::{load_bundle, read_captions, CaptionRecord, FeatureBundle};
use crate::graph::{build_object_graph, TemporalGraph};
use crate::numerics::{Tape, Var};
use crate::Matrix;

/// `−log softmax` averaged over the non-PAD targets.
pub fn cross_entropy_loss(logits: &Matrix, targets: &[usize], pad: usize) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let z = tape.constant(logits.clone());
    let loss = tape.cross_entropy(z, targets, pad)?;
    Ok(tape.scalar(loss))
}

/// `τ² · KL(p_teacher ‖ p_student)` at temperature `τ`, averaged over the
/// rows where `valid` holds (all rows when `None`).
pub fn kl_distillation_loss(
    student: &Matrix,
    teacher: &Matrix,
    temperature: f64,
    valid: Option<&[bool]>,
) -> Result<f64, TrainError> {
    let all = vec![true; student.rows()];
    let mut tape = Tape::new();
    let s = tape.constant(student.clone());
    let t = tape.constant(teacher.clone());
    let loss = tape.kl_distillation(s, t, temperature, valid.unwrap_or(&all))?;
    Ok(tape.scalar(loss))
}

pub fn total_loss(teacher_ce: f64, student_ce: f64, kl: f64, lambda_kd: f64) -> f64 {
    teacher_ce + student_ce + lambda_kd * kl
}

/// One training video: features, encoded reference captions (each ending
/// in EOS) and its fixed object graph.
#[derive(Clone, Debug)]
pub struct TrainItem {
    pub bundle: FeatureBundle,
    pub targets: Vec<Vec<usize>>,
    pub object_graph: TemporalGraph,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub items: Vec<TrainItem>,
    pub vocab: Vocabulary,
    pub dims: FeatureDims,
}

impl Dataset {
    /// Pairs bundles with their caption records, builds the vocabulary over
    /// the paired captions and the object graph of every video.
    pub fn build(bundles: Vec<FeatureBundle>, records: &[CaptionRecord], cfg: &TrainConfig) -> Result<Self, TrainError> {
        let (dims, paired) = pair_records(&bundles, records)?;
        let vocab = build_vocab(&paired, cfg.min_freq)?;
        Ok(Self::assemble(bundles, &paired, vocab, dims, cfg))
    }

    /// Like [`Dataset::build`] but encodes captions with an existing
    /// vocabulary, for evaluating a trained model on new videos.
    pub fn with_vocab(
        bundles: Vec<FeatureBundle>,
        records: &[CaptionRecord],
        vocab: Vocabulary,
        cfg: &TrainConfig,
    ) -> Result<Self, TrainError> {
        let (dims, paired) = pair_records(&bundles, records)?;
        Ok(Self::assemble(bundles, &paired, vocab, dims, cfg))
    }

    fn assemble(
        bundles: Vec<FeatureBundle>,
        paired: &[CaptionRecord],
        vocab: Vocabulary,
        dims: FeatureDims,
        cfg: &TrainConfig,
    ) -> Self {
        let max_words = cfg.decoder.max_len - 1;
        let items = bundles
            .into_iter()
            .zip(paired)
            .map(|(bundle, rec)| {
                let targets = rec
                    .captions
                    .iter()
                    .map(|c| {
                        let mut ids = vocab.encode(c);
                        if ids.len() > max_words {
                            log::warn!("caption of {:?} truncated to {max_words} tokens", rec.video_id);
                            ids.truncate(max_words);
                        }
                        ids.push(EOS);
                        ids
                    })
                    .collect();
                let object_graph = build_object_graph(&bundle.objects, &cfg.link);
                TrainItem {
                    bundle,
                    targets,
                    object_graph,
                }
            })
            .collect();
        Self { items, vocab, dims }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn pair_records(bundles: &[FeatureBundle], records: &[CaptionRecord]) -> Result<(FeatureDims, Vec<CaptionRecord>), TrainError> {
    let first = bundles.first().ok_or(TrainError::EmptyDataset)?;
    let dims = FeatureDims::of(first);
    let mut paired = Vec::with_capacity(bundles.len());
    for b in bundles {
        if FeatureDims::of(b) != dims {
            return Err(TrainError::InvalidData(format!(
                "video {:?} has feature dims {:?}, expected {:?}",
                b.video_id,
                FeatureDims::of(b),
                dims
            )));
        }
        let rec = records
            .iter()
            .find(|r| r.video_id == b.video_id)
            .ok_or_else(|| TrainError::MissingCaptions(b.video_id.clone()))?;
        paired.push(rec.clone());
    }
    Ok((dims, paired))
}

/// Decoder input `[BOS, w_1, …, w_n]` for the target `[w_1, …, w_n, EOS]`.
pub fn teacher_forcing_prefix(target: &[usize]) -> Vec<usize> {
    let mut p = Vec::with_capacity(target.len());
    p.push(BOS);
    p.extend(&target[..target.len() - 1]);
    p
}

/// Loss nodes of one video, averaged over its captions.
#[derive(Clone, Copy, Debug)]
pub struct VideoLosses {
    pub teacher_ce: Var,
    pub student_ce: Var,
    pub kl: Var,
    pub total: Var,
}

fn mean(tape: &mut Tape<f64>, parts: &[Var]) -> Result<Var, TrainError> {
    let mut acc = parts[0];
    for &p in &parts[1..] {
        acc = tape.add(acc, p)?;
    }
    Ok(tape.scale(acc, 1.0 / parts.len() as f64))
}

/// Teacher and student forward passes plus the three losses for one video.
pub fn video_losses(
    tape: &mut Tape<f64>,
    teacher: &super::model::TeacherVars<f64>,
    student: &DecoderVars<f64>,
    item: &TrainItem,
    cfg: &TrainConfig,
) -> Result<VideoLosses, TrainError> {
    let action = tape.constant(item.bundle.action.clone());
    let visual = tape.constant(item.bundle.visual_text.clone());
    let enc = teacher.encode(tape, action, visual, &item.object_graph)?;
    let (mut tce, mut sce, mut kls) = (Vec::new(), Vec::new(), Vec::new());
    for target in &item.targets {
        let prefix = teacher_forcing_prefix(target);
        let t_logits = teacher.decoder.forward(tape, enc.decoder_input, &prefix)?;
        let s_logits = student.forward(tape, visual, &prefix)?;
        tce.push(tape.cross_entropy(t_logits, target, PAD)?);
        sce.push(tape.cross_entropy(s_logits, target, PAD)?);
        let valid: Vec<bool> = target.iter().map(|&t| t != PAD).collect();
        kls.push(tape.kl_distillation(s_logits, t_logits, cfg.temperature, &valid)?);
    }
    let teacher_ce = mean(tape, &tce)?;
    let student_ce = mean(tape, &sce)?;
    let kl = mean(tape, &kls)?;
    let ce = tape.add(teacher_ce, student_ce)?;
    let weighted = tape.scale(kl, cfg.lambda_kd);
    let total = tape.add(ce, weighted)?;
    Ok(VideoLosses {
        teacher_ce,
        student_ce,
        kl,
        total,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub teacher_ce: f64,
    pub student_ce: f64,
    pub kl: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    /// CSV with `#` header lines echoing the effective config.
    pub fn to_csv(&self, cfg: &TrainConfig) -> String {
        let mut out = String::new();
        writeln!(out, "# config {}", cfg.to_json()).unwrap();
        writeln!(out, "# ablation {}", cfg.ablation()).unwrap();
        out.push_str("epoch,teacher_ce,student_ce,kl,total\n");
        for e in &self.epochs {
            writeln!(out, "{},{},{},{},{}", e.epoch, e.teacher_ce, e.student_ce, e.kl, e.total).unwrap();
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub teacher: TeacherParams<f64>,
    pub student: DecoderParams<f64>,
    pub card: ModelCard,
    pub log: TrainLog,
}

/// Loss values and parameter gradients of the whole dataset at the current
/// parameters, each averaged over videos.
pub struct BatchGradients {
    pub log: EpochLog,
    pub teacher: Vec<Matrix>,
    pub student: Vec<Matrix>,
}

pub fn batch_gradients(
    teacher: &TeacherParams<f64>,
    student: &DecoderParams<f64>,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<BatchGradients, TrainError> {
    let n = data.len() as f64;
    let mut log = EpochLog {
        epoch: 0,
        teacher_ce: 0.0,
        student_ce: 0.0,
        kl: 0.0,
        total: 0.0,
    };
    let mut tg: Option<Vec<Matrix>> = None;
    let mut sg: Option<Vec<Matrix>> = None;
    for item in &data.items {
        let mut tape = Tape::new();
        let tv = teacher.bind(&mut tape);
        let sv = student.bind(&mut tape);
        let l = video_losses(&mut tape, &tv, &sv, item, cfg)?;
        log.teacher_ce += tape.scalar(l.teacher_ce) / n;
        log.student_ce += tape.scalar(l.student_ce) / n;
        log.kl += tape.scalar(l.kl) / n;
        log.total += tape.scalar(l.total) / n;
        let grads = tape.backward(l.total)?;
        for (acc, vars) in [(&mut tg, tv.vars()), (&mut sg, sv.vars())] {
            let acc = acc.get_or_insert_with(|| vars.iter().map(|&v| Matrix::zeros(tape.shape(v).0, tape.shape(v).1)).collect());
            for (a, &v) in acc.iter_mut().zip(&vars) {
                if let Some(g) = grads.get(v) {
                    a.add_assign(&g.scale(1.0 / n));
                }
            }
        }
    }
    Ok(BatchGradients {
        log,
        teacher: tg.unwrap_or_default(),
        student: sg.unwrap_or_default(),
    })
}

/// Full-batch training of teacher and student together. `on_epoch` runs
/// after every parameter update.
pub fn train_with(
    cfg: &TrainConfig,
    data: &Dataset,
    mut on_epoch: impl FnMut(&EpochLog, &TeacherParams<f64>, &DecoderParams<f64>) -> Result<(), TrainError>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut teacher = TeacherParams::<f64>::init(data.dims, data.vocab.len(), cfg);
    let mut student = student_init::<f64>(data.dims, data.vocab.len(), cfg);
    let mut adam_t = Adam::new(cfg.lr);
    let mut adam_s = Adam::new(cfg.lr);
    let mut log = TrainLog::default();
    for epoch in 1..=cfg.epochs {
        let batch = batch_gradients(&teacher, &student, data, cfg)?;
        let entry = EpochLog { epoch, ..batch.log };
        if ![entry.teacher_ce, entry.student_ce, entry.kl, entry.total]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(TrainError::DivergedLoss { epoch });
        }
        adam_t.update(teacher.params_mut(), &batch.teacher);
        adam_s.update(student.params_mut(), &batch.student);
        log::debug!(
            "epoch {epoch}: teacher_ce {:.5} student_ce {:.5} kl {:.5}",
            entry.teacher_ce,
            entry.student_ce,
            entry.kl
        );
        log.epochs.push(entry);
        on_epoch(&entry, &teacher, &student)?;
    }
    Ok(TrainOutcome {
        teacher,
        student,
        card: ModelCard {
            dims: data.dims,
            config: cfg.clone(),
            vocab: data.vocab.clone(),
        },
        log,
    })
}

pub fn train(cfg: &TrainConfig, data: &Dataset) -> Result<TrainOutcome, TrainError> {
    train_with(cfg, data, |_, _, _| Ok(()))
}

/// Fraction of reference positions (EOS included) where the hypothesis has
/// the same token.
pub fn token_accuracy(hypothesis: &[usize], reference: &[usize]) -> f64 {
    if reference.is_empty() {
        return 1.0;
    }
    let hits = reference.iter().zip(hypothesis).filter(|(r, h)| r == h).count();
    hits as f64 / reference.len() as f64
}

/// Greedy teacher caption ids for one training video.
pub fn teacher_greedy(teacher: &TeacherParams<f64>, item: &TrainItem, max_len: usize) -> Result<Vec<usize>, TrainError> {
    let mut tape = Tape::new();
    let tv = teacher.bind(&mut tape);
    let action = tape.constant(item.bundle.action.clone());
    let visual = tape.constant(item.bundle.visual_text.clone());
    let enc = tv.encode(&mut tape, action, visual, &item.object_graph)?;
    let input = tape.value(enc.decoder_input).clone();
    Ok(greedy_decode(&input, &teacher.decoder, max_len)?.tokens)
}

/// Greedy student caption ids from the visual-text features alone.
pub fn student_greedy(student: &DecoderParams<f64>, visual: &Matrix, max_len: usize) -> Result<Vec<usize>, TrainError> {
    Ok(greedy_decode(visual, student, max_len)?.tokens)
}

/// Token accuracy over all first captions of the dataset.
pub fn dataset_accuracy(
    data: &Dataset,
    mut decode: impl FnMut(&TrainItem) -> Result<Vec<usize>, TrainError>,
) -> Result<f64, TrainError> {
    let (mut hits, mut total) = (0.0, 0usize);
    for item in &data.items {
        let reference = &item.targets[0];
        hits += token_accuracy(&decode(item)?, reference) * reference.len() as f64;
        total += reference.len();
    }
    Ok(hits / total.max(1) as f64)
}

/// Reads every `.vft` file of `dir` (sorted by name) and its caption file:
/// `captions.jsonl` if present, otherwise the only `.jsonl` in the directory.
pub fn load_dataset_dir(dir: &Path) -> Result<(Vec<FeatureBundle>, Vec<CaptionRecord>), TrainError> {
    let entries = std::fs::read_dir(dir).map_err(|e| TrainError::io(dir, e))?;
    let mut bundles_paths = Vec::new();
    let mut jsonl = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| TrainError::io(dir, e))?.path();
        match path.extension().and_then(|e| e.to_str()) {
            Some("vft") => bundles_paths.push(path),
            Some("jsonl") => jsonl.push(path),
            _ => {}
        }
    }
    bundles_paths.sort();
    jsonl.sort();
    let captions = match jsonl.iter().find(|p| p.file_name().is_some_and(|n| n == "captions.jsonl")) {
        Some(p) => p.clone(),
        None if jsonl.len() == 1 => jsonl[0].clone(),
        None => {
            return Err(TrainError::InvalidData(format!(
                "{}: expected captions.jsonl or exactly one .jsonl file, found {}",
                dir.display(),
                jsonl.len()
            )))
        }
    };
    if bundles_paths.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let bundles = bundles_paths
        .iter()
        .map(|p| {
            load_bundle(p).map_err(|source| TrainError::Bundle {
                path: p.display().to_string(),
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let records = read_captions(&captions)?;
    Ok((bundles, records))
}
