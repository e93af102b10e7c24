//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::features::{load_bundle, read_captions, read_jsonl, save_bundle, synth_dataset, write_captions, Pattern, SynthDims};
use crate::gradcheck::{format_report, run_all, GradcheckOptions, GroupReport};
use crate::graph::{build_action_graph, build_object_graph, export_graph, merge_graphs, ExportFormat, LinkConfig};
use crate::metrics::{evaluate, CandidateRecord, MetricsError};
use crate::training::{caption_file, load_dataset_dir, save_checkpoint, train_with, Dataset, DecodeOptions, TrainConfig};
use crate::{Error, EXIT_OK, EXIT_USAGE};

pub const LOG_FILE: &str = "train_log.csv";
pub const CAPTIONS_FILE: &str = "captions.jsonl";

#[derive(Debug, Parser)]
#[command(name = "actgraph", version, about = "Video captioning with a temporal graph transformer teacher and a distilled student")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PatternArg {
    ConstantAction,
    Drift,
    Burst,
    /// Cycles through all three patterns.
    Mixed,
}

impl PatternArg {
    fn patterns(self) -> Vec<Pattern> {
        match self {
            PatternArg::ConstantAction => vec![Pattern::ConstantAction],
            PatternArg::Drift => vec![Pattern::Drift],
            PatternArg::Burst => vec![Pattern::Burst],
            PatternArg::Mixed => Pattern::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    Temporal,
    Semantic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Dot,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic feature set and its captions.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        videos: usize,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        #[arg(long, default_value_t = 3)]
        objects: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = PatternArg::Mixed)]
        pattern: PatternArg,
    },
    /// Train teacher and student; writes checkpoints and a CSV log.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// JSON training config; missing fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        ablate: Vec<Ablation>,
    },
    /// Caption one feature file with the student decoder.
    Caption {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        beam: u64,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Score candidate captions against references.
    Eval {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        references: PathBuf,
    },
    /// Export the temporal graph of one feature file.
    GraphExport {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Json)]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = LinkConfig::default().threshold)]
        threshold: f64,
        #[arg(long, default_value_t = LinkConfig::default().top_k)]
        top_k: usize,
    },
    /// Compare analytic and finite-difference gradients of every module.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = crate::gradcheck::DEFAULT_SEEDS)]
        seeds: usize,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), Error> {
    out.write_all(text.as_bytes()).map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn synth(out: &Path, videos: usize, frames: usize, objects: usize, seed: u64, pattern: PatternArg) -> Result<(), Error> {
    let samples = synth_dataset(seed, videos, frames, objects, SynthDims::default(), &pattern.patterns())?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for s in &samples {
        save_bundle(&s.bundle, &out.join(format!("{}.vft", s.bundle.video_id)))?;
    }
    let records: Vec<_> = samples.into_iter().map(|s| s.record).collect();
    write_captions(&out.join(CAPTIONS_FILE), &records)?;
    log::info!("wrote {} videos to {}", records.len(), out.display());
    Ok(())
}

fn load_config(path: Option<&Path>, ablate: &[Ablation]) -> Result<TrainConfig, Error> {
    let mut cfg = match path {
        Some(p) => TrainConfig::from_json(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => TrainConfig::default(),
    };
    for a in ablate {
        match a {
            Ablation::Temporal => cfg.disable_temporal = true,
            Ablation::Semantic => cfg.disable_semantic = true,
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(data: &Path, config: Option<&Path>, out: &Path, ablate: &[Ablation]) -> Result<(), Error> {
    let cfg = load_config(config, ablate)?;
    let (bundles, records) = load_dataset_dir(data)?;
    let dataset = Dataset::build(bundles, &records, &cfg)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let outcome = train_with(&cfg, &dataset, |entry, teacher, student| {
        if cfg.checkpoint_every > 0 && entry.epoch % cfg.checkpoint_every == 0 && entry.epoch < cfg.epochs {
            let card = crate::training::ModelCard {
                dims: dataset.dims,
                config: cfg.clone(),
                vocab: dataset.vocab.clone(),
            };
            save_checkpoint(&out.join(format!("epoch-{:05}", entry.epoch)), &card, teacher, student)?;
        }
        Ok(())
    })?;
    save_checkpoint(out, &outcome.card, &outcome.teacher, &outcome.student)?;
    write_file(&out.join(LOG_FILE), &outcome.log.to_csv(&cfg))?;
    if let Some(last) = outcome.log.epochs.last() {
        log::info!(
            "trained {} epochs ({}): teacher_ce {:.5} student_ce {:.5} kl {:.5}",
            last.epoch,
            cfg.ablation(),
            last.teacher_ce,
            last.student_ce,
            last.kl
        );
    }
    Ok(())
}

fn eval(candidates: &Path, references: &Path) -> Result<String, Error> {
    let cands: Vec<CandidateRecord> = read_jsonl(candidates)?;
    if cands.is_empty() {
        return Err(MetricsError::EmptyCorpus.into());
    }
    let refs = read_captions(references)?;
    let report = evaluate(&cands, &refs)?;
    Ok(serde_json::to_string_pretty(&report).expect("report serializes") + "\n")
}

fn graph_export(bundle: &Path, format: FormatArg, threshold: f64, top_k: usize) -> Result<String, Error> {
    let b = load_bundle(bundle)?;
    let link = LinkConfig { threshold, top_k };
    let graph = merge_graphs(&build_object_graph(&b.objects, &link), &build_action_graph(&b.action))?;
    let format = match format {
        FormatArg::Json => ExportFormat::Json,
        FormatArg::Dot => ExportFormat::Dot,
    };
    Ok(export_graph(&graph, format))
}

fn gradcheck(seed: u64, seeds: usize, corrupt: bool, out: &mut dyn Write) -> Result<(), Error> {
    let opts = GradcheckOptions {
        seed,
        seeds,
        corrupt,
        ..GradcheckOptions::default()
    };
    let reports = run_all(&opts)?;
    emit(out, &format_report(&reports))?;
    let failed = reports.iter().filter(|r| !GroupReport::passed(r)).count();
    if failed > 0 {
        return Err(Error::GradientMismatch { failed });
    }
    Ok(())
}

/// Runs a parsed command, writing its primary output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), Error> {
    match cli.command {
        Command::Synth {
            out: dir,
            videos,
            frames,
            objects,
            seed,
            pattern,
        } => synth(&dir, videos, frames, objects, seed, pattern),
        Command::Train {
            data,
            config,
            out: dir,
            ablate,
        } => train(&data, config.as_deref(), &dir, &ablate),
        Command::Caption {
            ckpt,
            bundle,
            beam,
            max_len,
        } => {
            let opts = DecodeOptions {
                beam: beam as usize,
                max_len,
            };
            let text = caption_file(&ckpt, &bundle, opts)?;
            emit(out, &format!("{text}\n"))
        }
        Command::Eval { candidates, references } => emit(out, &eval(&candidates, &references)?),
        Command::GraphExport {
            bundle,
            format,
            out: path,
            threshold,
            top_k,
        } => {
            let text = graph_export(&bundle, format, threshold, top_k)?;
            match path {
                Some(p) => write_file(&p, &text),
                None => emit(out, &text),
            }
        }
        Command::Gradcheck {
            seed,
            seeds,
            corrupt_gradient,
        } => gradcheck(seed, seeds, corrupt_gradient, out),
    }
}

/// Parses `args`, runs the command and maps the outcome to an exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(cli, &mut lock) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
