//! Finite-difference gradient suites for every trainable module.
//!
//! Each suite draws random parameters and inputs per seed, differentiates a
//! scalar loss on the tape and compares every parameter entry against the
//! central-difference oracle.

use rand::Rng;
use thiserror::Error;

use crate::caption::{DecoderConfig, DecoderParams};
use crate::features::{synth_generate, CaptionRecord, Pattern, SynthDims};
use crate::graph::{
    build_action_graph, build_object_graph, merge_graphs, GraphError, GraphNorm, GraphTransformerParams, LinkConfig,
};
use crate::numerics::{derive_seed, finite_diff_grad, max_relative_error, seeded_init, seeded_rng, InitScheme, NumericsError, Var};
use crate::semantic::{SemanticError, SemanticParams, ValuesFrom};
use crate::temporal::{TemporalError, TemporalParams, WindowConfig};
use crate::training::{student_init, video_losses, Dataset, TeacherParams, TrainConfig, TrainError};
use crate::{Matrix, Tape};

pub const GRAD_EPS: f64 = 1e-5;
pub const MODULE_TOLERANCE: f64 = 1e-4;
pub const PIPELINE_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_SEEDS: usize = 20;

#[derive(Debug, Error)]
pub enum CheckError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

impl From<crate::caption::CaptionError> for CheckError {
    fn from(e: crate::caption::CaptionError) -> Self {
        CheckError::Train(e.into())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Temporal,
    Semantic,
    Graph,
    Decoder,
    Losses,
    Pipeline,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Temporal,
        Suite::Semantic,
        Suite::Graph,
        Suite::Decoder,
        Suite::Losses,
        Suite::Pipeline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Temporal => "temporal",
            Suite::Semantic => "semantic",
            Suite::Graph => "graph",
            Suite::Decoder => "decoder",
            Suite::Losses => "losses",
            Suite::Pipeline => "pipeline",
        }
    }

    pub fn tolerance(self) -> f64 {
        match self {
            Suite::Pipeline => PIPELINE_TOLERANCE,
            _ => MODULE_TOLERANCE,
        }
    }
}

/// Worst relative error of one parameter group over all seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupReport {
    pub suite: Suite,
    pub group: String,
    pub entries: usize,
    pub max_rel_err: f64,
}

impl GroupReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.suite.tolerance()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub seeds: usize,
    pub eps: f64,
    /// Adds a small error to one analytic gradient per suite.
    pub corrupt: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            seeds: DEFAULT_SEEDS,
            eps: GRAD_EPS,
            corrupt: false,
        }
    }
}

/// Per-parameter max relative error between tape gradients and central
/// differences. `eval` binds the parameters of `model` on the tape and
/// returns the loss plus the parameter vars in `params_mut` order.
pub fn gradient_errors<P: Clone>(
    model: &P,
    params_mut: impl Fn(&mut P) -> Vec<&mut Matrix>,
    eval: impl Fn(&P, &mut Tape) -> Result<(Var, Vec<Var>), CheckError>,
    eps: f64,
    corrupt: bool,
) -> Result<Vec<f64>, CheckError> {
    split_gradient_errors(
        model,
        params_mut,
        |p, tape| {
            let (loss, vars) = eval(p, tape)?;
            Ok((loss, vec![loss; vars.len()], vars))
        },
        eps,
        corrupt,
    )
}

/// Like [`gradient_errors`], but `eval` also names per parameter the node
/// whose value the finite differences probe. Backpropagation always starts
/// from the first returned node.
pub fn split_gradient_errors<P: Clone>(
    model: &P,
    params_mut: impl Fn(&mut P) -> Vec<&mut Matrix>,
    eval: impl Fn(&P, &mut Tape) -> Result<(Var, Vec<Var>, Vec<Var>), CheckError>,
    eps: f64,
    corrupt: bool,
) -> Result<Vec<f64>, CheckError> {
    let mut tape = Tape::new();
    let (loss, _, vars) = eval(model, &mut tape)?;
    let grads = tape.backward(loss)?;
    let mut scratch = model.clone();
    let count = params_mut(&mut scratch).len();
    assert_eq!(count, vars.len(), "parameter and var lists disagree");
    let mut errors = Vec::with_capacity(count);
    for (i, &var) in vars.iter().enumerate() {
        let mut analytic = grads.get_or_zeros(var, tape.shape(var));
        if corrupt && i == 0 {
            let g = analytic.get(0, 0);
            analytic.set(0, 0, g + 1e-2 * (g.abs() + 1.0));
        }
        let x = params_mut(&mut scratch)[i].data().to_vec();
        let numeric = finite_diff_grad(
            |probe: &[f64]| {
                let mut m = model.clone();
                params_mut(&mut m)[i].data_mut().copy_from_slice(probe);
                let mut t = Tape::new();
                match eval(&m, &mut t) {
                    Ok((_, probes, _)) => t.scalar(probes[i]),
                    Err(_) => f64::NAN,
                }
            },
            &x,
            eps,
        )?;
        errors.push(max_relative_error(analytic.data(), &numeric));
    }
    Ok(errors)
}

fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
    seeded_init(rows, cols, seed, InitScheme::Uniform(1.0))
}

struct Accumulator {
    suite: Suite,
    groups: Vec<GroupReport>,
}

impl Accumulator {
    fn new(suite: Suite) -> Self {
        Self { suite, groups: Vec::new() }
    }

    fn add(&mut self, names: Vec<String>, sizes: Vec<usize>, errors: Vec<f64>) {
        for ((name, entries), err) in names.into_iter().zip(sizes).zip(errors) {
            match self.groups.iter_mut().find(|g| g.group == name) {
                Some(g) => g.max_rel_err = g.max_rel_err.max(err),
                None => self.groups.push(GroupReport {
                    suite: self.suite,
                    group: name,
                    entries,
                    max_rel_err: err,
                }),
            }
        }
    }
}

fn names_sizes(named: Vec<(String, &Matrix)>) -> (Vec<String>, Vec<usize>) {
    named.into_iter().map(|(n, m)| (n, m.data().len())).unzip()
}

fn temporal_suite(opts: &GradcheckOptions) -> Result<Vec<GroupReport>, CheckError> {
    let mut acc = Accumulator::new(Suite::Temporal);
    for s in 0..opts.seeds as u64 {
        let seed = derive_seed(opts.seed, 1000 + s);
        let frames = 2 + (s as usize % 4);
        let params = TemporalParams::<f64>::init(3, 2, 2, WindowConfig::default(), seed);
        let actions = random(frames, 3, derive_seed(seed, 1));
        let weights = random(frames, 4, derive_seed(seed, 2));
        let errors = gradient_errors(
            &params,
            |p| p.params_mut(),
            |p, tape| {
                let vars = p.bind(tape);
                let m = tape.constant(actions.clone());
                let out = vars.forward(tape, m)?;
                Ok((tape.weighted_sum(out.fused, &weights)?, vars.vars()))
            },
            opts.eps,
            opts.corrupt,
        )?;
        let (n, z) = names_sizes(params.named("temporal"));
        acc.add(n, z, errors);
    }
    Ok(acc.groups)
}

fn semantic_suite(opts: &GradcheckOptions) -> Result<Vec<GroupReport>, CheckError> {
    let mut acc = Accumulator::new(Suite::Semantic);
    for s in 0..opts.seeds as u64 {
        let seed = derive_seed(opts.seed, 2000 + s);
        let frames = 2 + (s as usize % 4);
        let params = SemanticParams::<f64>::init(3, 4, 2, 2, ValuesFrom::Action, seed);
        let visual = random(frames, 3, derive_seed(seed, 1));
        let fused = random(frames, 4, derive_seed(seed, 2));
        let weights = random(frames, 2, derive_seed(seed, 3));
        let errors = gradient_errors(
            &params,
            |p| p.params_mut(),
            |p, tape| {
                let vars = p.bind(tape);
                let c = tape.constant(visual.clone());
                let a = tape.constant(fused.clone());
                let out = vars.forward(tape, c, a)?;
                Ok((tape.weighted_sum(out.seq, &weights)?, vars.vars()))
            },
            opts.eps,
            opts.corrupt,
        )?;
        let (n, z) = names_sizes(params.named("semantic"));
        acc.add(n, z, errors);
    }
    Ok(acc.groups)
}

fn graph_suite(opts: &GradcheckOptions) -> Result<Vec<GroupReport>, CheckError> {
    let mut acc = Accumulator::new(Suite::Graph);
    let dims = SynthDims {
        object: 3,
        action: 2,
        visual_text: 2,
    };
    for s in 0..opts.seeds as u64 {
        let seed = derive_seed(opts.seed, 3000 + s);
        let pattern = Pattern::ALL[s as usize % 3];
        let sample = synth_generate(seed, 3, 2, dims, pattern).map_err(TrainError::from)?;
        let link = LinkConfig {
            threshold: 0.0,
            top_k: 2,
        };
        let b = random(3, 2, derive_seed(seed, 1));
        let graph = merge_graphs(&build_object_graph(&sample.bundle.objects, &link), &build_action_graph(&b))?;
        let norm = if s % 2 == 0 { GraphNorm::LayerNorm } else { GraphNorm::None };
        let params = GraphTransformerParams::<f64>::init(3, 2, 3, 2, norm, seed);
        let weights = random(graph.node_count(), 3, derive_seed(seed, 2));
        let errors = gradient_errors(
            &params,
            |p| p.params_mut(),
            |p, tape| {
                let vars = p.bind(tape);
                let out = vars.forward(tape, &graph, None)?;
                Ok((tape.weighted_sum(out.nodes, &weights)?, vars.vars()))
            },
            opts.eps,
            opts.corrupt,
        )?;
        let (n, z) = names_sizes(params.named("graph"));
        acc.add(n, z, errors);
    }
    Ok(acc.groups)
}

fn decoder_suite(opts: &GradcheckOptions) -> Result<Vec<GroupReport>, CheckError> {
    let mut acc = Accumulator::new(Suite::Decoder);
    let cfg = DecoderConfig {
        d_model: 4,
        d_ff: 6,
        blocks: 2,
        max_len: 6,
    };
    let vocab = 7;
    for s in 0..opts.seeds as u64 {
        let seed = derive_seed(opts.seed, 4000 + s);
        let mut params = DecoderParams::<f64>::init(3, vocab, &cfg, seed);
        // Non-zero biases so their gradients are exercised away from the init.
        for b in &mut params.blocks {
            b.ff_in_bias = random(1, cfg.d_ff, derive_seed(seed, 7));
            b.ff_out_bias = random(1, cfg.d_model, derive_seed(seed, 8));
        }
        params.output_bias = random(1, vocab, derive_seed(seed, 9));
        let visual = random(3, 3, derive_seed(seed, 1));
        let mut rng = seeded_rng(derive_seed(seed, 2));
        let len = 2 + (s as usize % 4);
        let target: Vec<usize> = (0..len).map(|_| rng.gen_range(1..vocab)).collect();
        let mut prefix = vec![crate::caption::BOS];
        prefix.extend(&target[..len - 1]);
        let errors = gradient_errors(
            &params,
            |p| p.params_mut(),
            |p, tape| {
                let vars = p.bind(tape);
                let v = tape.constant(visual.clone());
                let logits = vars.forward(tape, v, &prefix)?;
                Ok((tape.cross_entropy(logits, &target, crate::caption::PAD)?, vars.vars()))
            },
            opts.eps,
            opts.corrupt,
        )?;
        let (n, z) = names_sizes(params.named("decoder"));
        acc.add(n, z, errors);
    }
    Ok(acc.groups)
}

fn losses_suite(opts: &GradcheckOptions) -> Result<Vec<GroupReport>, CheckError> {
    let mut acc = Accumulator::new(Suite::Losses);
    for s in 0..opts.seeds as u64 {
        let seed = derive_seed(opts.seed, 5000 + s);
        let (rows, cols) = (2 + s as usize % 3, 5);
        let logits = random(rows, cols, derive_seed(seed, 1)).scale(3.0);
        let teacher = random(rows, cols, derive_seed(seed, 2)).scale(3.0);
        let mut rng = seeded_rng(derive_seed(seed, 3));
        let mut targets: Vec<usize> = (0..rows).map(|_| rng.gen_range(0..cols)).collect();
        targets[0] = 1;
        let tau = 0.5 + rng.gen::<f64>() * 2.0;
        let valid: Vec<bool> = targets.iter().map(|&t| t != 0).collect();

        let ce = gradient_errors(
            &logits,
            |m| vec![m],
            |m, tape| {
                let z = tape.param(m.clone());
                Ok((tape.cross_entropy(z, &targets, 0)?, vec![z]))
            },
            opts.eps,
            opts.corrupt,
        )?;
        acc.add(vec!["cross_entropy.logits".into()], vec![rows * cols], ce);
        let kl = gradient_errors(
            &logits,
            |m| vec![m],
            |m, tape| {
                let z = tape.param(m.clone());
                let t = tape.constant(teacher.clone());
                Ok((tape.kl_distillation(z, t, tau, &valid)?, vec![z]))
            },
            opts.eps,
            opts.corrupt,
        )?;
        acc.add(vec!["kl_distillation.student".into()], vec![rows * cols], kl);
    }
    Ok(acc.groups)
}

/// Tiny end-to-end config used by the pipeline suite.
pub fn pipeline_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        attn_dim: 2,
        graph_dim: 3,
        graph_layers: 1,
        link: LinkConfig {
            threshold: 0.0,
            top_k: 2,
        },
        decoder: DecoderConfig {
            d_model: 4,
            d_ff: 4,
            blocks: 1,
            max_len: 8,
        },
        ..TrainConfig::default()
    }
}

fn pipeline_suite(opts: &GradcheckOptions) -> Result<Vec<GroupReport>, CheckError> {
    let mut acc = Accumulator::new(Suite::Pipeline);
    let dims = SynthDims {
        object: 3,
        action: 2,
        visual_text: 4,
    };
    for s in 0..opts.seeds as u64 {
        let seed = derive_seed(opts.seed, 6000 + s);
        let cfg = pipeline_config(seed);
        let sample = synth_generate(seed, 3, 2, dims, Pattern::ALL[s as usize % 3]).map_err(TrainError::from)?;
        let record = CaptionRecord {
            video_id: sample.bundle.video_id.clone(),
            ..sample.record.clone()
        };
        let data = Dataset::build(vec![sample.bundle.clone()], &[record], &cfg)?;
        let teacher = TeacherParams::<f64>::init(data.dims, data.vocab.len(), &cfg);
        let student = student_init::<f64>(data.dims, data.vocab.len(), &cfg);
        let item = &data.items[0];
        let model = (teacher, student);
        // The distillation term sees teacher logits as constants, so teacher
        // parameters are probed against the teacher loss alone.
        let errors = split_gradient_errors(
            &model,
            |(t, st)| {
                let mut v = t.params_mut();
                v.extend(st.params_mut());
                v
            },
            |(t, st), tape| {
                let tv = t.bind(tape);
                let sv = st.bind(tape);
                let l = video_losses(tape, &tv, &sv, item, &cfg)?;
                let (tvars, svars) = (tv.vars(), sv.vars());
                let mut probes = vec![l.teacher_ce; tvars.len()];
                probes.extend(vec![l.total; svars.len()]);
                Ok((l.total, probes, [tvars, svars].concat()))
            },
            opts.eps,
            opts.corrupt,
        )?;
        let mut named = model.0.named().into_iter().map(|(n, m)| (format!("teacher.{n}"), m)).collect::<Vec<_>>();
        named.extend(model.1.named("student"));
        let (n, z) = names_sizes(named);
        acc.add(n, z, errors);
    }
    Ok(acc.groups)
}

pub fn run_suite(suite: Suite, opts: &GradcheckOptions) -> Result<Vec<GroupReport>, CheckError> {
    match suite {
        Suite::Temporal => temporal_suite(opts),
        Suite::Semantic => semantic_suite(opts),
        Suite::Graph => graph_suite(opts),
        Suite::Decoder => decoder_suite(opts),
        Suite::Losses => losses_suite(opts),
        Suite::Pipeline => pipeline_suite(opts),
    }
}

pub fn run_all(opts: &GradcheckOptions) -> Result<Vec<GroupReport>, CheckError> {
    let mut out = Vec::new();
    for suite in Suite::ALL {
        out.extend(run_suite(suite, opts)?);
    }
    Ok(out)
}

/// Fixed-width table, one line per parameter group.
pub fn format_report(reports: &[GroupReport]) -> String {
    let mut out = format!("{:<10} {:<34} {:>7} {:>12} {:>9}  {}\n", "suite", "group", "entries", "max_rel_err", "tol", "result");
    for r in reports {
        out.push_str(&format!(
            "{:<10} {:<34} {:>7} {:>12.3e} {:>9.0e}  {}\n",
            r.suite.name(),
            r.group,
            r.entries,
            r.max_rel_err,
            r.suite.tolerance(),
            if r.passed() { "pass" } else { "FAIL" }
        ));
    }
    out
}
