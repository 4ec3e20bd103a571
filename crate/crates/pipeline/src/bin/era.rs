//! `era`: command line front end for the alignment pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use era_neural::{AdamConfig, Checkpoint, PretrainConfig};
use era_pipeline::align::{run_align, AlignConfig, AlignMode};
use era_pipeline::config::{property_context, required, PromptSource, RunConfig};
use era_pipeline::dataset::{gen_preference_dataset, read_jsonl, write_jsonl};
use era_pipeline::metrics::{emit_metrics, prompt_deltas};
use era_pipeline::pretrain::{finetune_prompted, perturbation_pairs, pretrain_policy};
use era_pipeline::sample::sample_smiles;
use era_pipeline::tabular::verify_tabular;
use era_pipeline::text::{read_smiles_file, write_lines};
use era_pipeline::{generate_corpus, Family, PipelineError, Result};

#[derive(Parser)]
#[command(name = "era", version, about = "Energy rank alignment experiments at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for every random choice the command makes.
    #[arg(long)]
    seed: u64,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct Prompts {
    /// SMILES file of prompt molecules, one per line.
    #[arg(long, conflicts_with = "unprompted")]
    prompts: Option<PathBuf>,
    /// Number of unprompted groups (generation from the start token).
    #[arg(long)]
    unprompted: Option<usize>,
}

impl Prompts {
    fn apply(self, source: &mut PromptSource) {
        if self.prompts.is_some() || self.unprompted.is_some() {
            *source = PromptSource { prompts: self.prompts, unprompted: self.unprompted };
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit random tabular instances and compare with the exact optimum.
    TabularVerify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write a corpus of generated molecules.
    GenCorpus {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        family: Option<Family>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train a policy by next-token prediction, or fine-tune one for prompts.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Checkpoint to start from.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Fine-tune `--init` on single-token perturbations of the corpus.
        #[arg(long)]
        prompted: bool,
    },
    /// Sample a preference dataset from a reference checkpoint.
    GenDataset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        prompts: Prompts,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Align a reference checkpoint on a preference dataset.
    Align {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// One or more inverse temperatures.
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        beta: Option<Vec<f64>>,
        /// One or more regularization strengths.
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        gamma: Option<Vec<f64>>,
        /// Train with the DPO baseline instead.
        #[arg(long)]
        dpo: bool,
    },
    /// Draw molecules from a checkpoint.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        prompts: Prompts,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Sample and summarize, optionally against a reference checkpoint.
    Metrics {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[command(flatten)]
        prompts: Prompts,
        #[arg(long)]
        n_samples: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    match &common.config {
        Some(p) => RunConfig::from_path(p),
        None => Ok(RunConfig::default()),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, value: Option<PathBuf>) {
    if value.is_some() {
        *slot = value;
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| PipelineError::io(format!("writing {}", path.display()), e))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(PipelineError::config(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}

fn log_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".log.json");
    output.with_file_name(name)
}

/// Output path for one grid point; the plain path when there is only one.
fn grid_path(output: &Path, beta: f64, gamma: f64, single: bool) -> PathBuf {
    if single {
        return output.to_path_buf();
    }
    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("aligned");
    let ext = output.extension().and_then(|s| s.to_str()).unwrap_or("json");
    output.with_file_name(format!("{stem}.beta{beta}.gamma{gamma}.{ext}"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TabularVerify { common, instances, output } => {
            let mut cfg = load_config(&common)?;
            set(&mut cfg.tabular.instances, instances);
            set_path(&mut cfg.tabular.output, output);
            let report = verify_tabular(cfg.tabular.instances, common.seed)?;
            eprintln!(
                "{} instances, max TV {:.3e}, {} converged, {:.2}s",
                report.instances, report.max_tv, report.converged, report.seconds
            );
            match &cfg.tabular.output {
                Some(p) => write_json(p, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
            if report.converged < report.instances {
                return Err(PipelineError::Training(format!(
                    "{} of {} instances did not converge",
                    report.instances - report.converged,
                    report.instances
                )));
            }
        }
        Command::GenCorpus { common, family, size, output } => {
            let mut cfg = load_config(&common)?;
            set(&mut cfg.corpus.family, family);
            set(&mut cfg.corpus.size, size);
            set_path(&mut cfg.corpus.output, output);
            let corpus = generate_corpus(cfg.corpus.family, cfg.corpus.size, common.seed)?;
            match &cfg.corpus.output {
                Some(p) => write_lines(p, &corpus)?,
                None => corpus.iter().for_each(|s| println!("{s}")),
            }
        }
        Command::Pretrain { common, corpus, output, epochs, learning_rate, init, prompted } => {
            let mut cfg = load_config(&common)?;
            let s = &mut cfg.pretrain;
            set_path(&mut s.corpus, corpus);
            set_path(&mut s.output, output);
            set(&mut s.epochs, epochs);
            set(&mut s.learning_rate, learning_rate);
            set_path(&mut s.init, init);
            s.prompted |= prompted;
            let smiles = read_smiles_file(required(&s.corpus, "pretrain corpus")?)?;
            let out = required(&s.output, "pretrain output")?.to_path_buf();
            let train = PretrainConfig {
                epochs: s.epochs,
                batch_size: s.batch_size,
                adam: AdamConfig::with_learning_rate(s.learning_rate),
                seed: common.seed,
            };
            let progress = |e: usize, l: f64| eprintln!("epoch {e}: loss {l:.5}");
            let (checkpoint, report) = if s.prompted {
                let mut policy = load_checkpoint(required(&s.init, "pretrain init")?)?.into_policy()?;
                let (pairs, skipped) = perturbation_pairs(&smiles, &policy.vocab, common.seed)?;
                eprintln!("{} fine-tuning pairs, {skipped} prompts skipped", pairs.len());
                let report = finetune_prompted(&mut policy, &pairs, &train, progress)?;
                (Checkpoint::from_policy(&policy), report)
            } else {
                if s.init.is_some() {
                    return Err(PipelineError::config("init is only used together with prompted fine-tuning"));
                }
                let (policy, report) = pretrain_policy(&smiles, cfg.model, &train, progress)?;
                (Checkpoint::from_policy(&policy), report)
            };
            let mut checkpoint = checkpoint;
            checkpoint.metadata.insert("seed".into(), common.seed.to_string());
            checkpoint.save(&out)?;
            write_json(&log_path(&out), &report)?;
        }
        Command::GenDataset { common, checkpoint, prompts, k, output } => {
            let mut cfg = load_config(&common)?;
            let s = &mut cfg.dataset;
            set_path(&mut s.checkpoint, checkpoint);
            prompts.apply(&mut s.prompts);
            set(&mut s.k, k);
            set_path(&mut s.output, output);
            let reference = load_checkpoint(required(&s.checkpoint, "dataset checkpoint")?)?.into_policy()?;
            let spec = s.energy.clone().ok_or_else(|| PipelineError::config("dataset energy is not set"))?;
            let ctx = property_context(s.properties_csv.as_deref())?;
            let evaluator = era_chem::EnergyEvaluator::new(spec, ctx)?;
            let prompt_set = s.prompts.load()?;
            let records = gen_preference_dataset(&reference, &prompt_set, &evaluator, s.k, s.temperature, common.seed)?;
            write_jsonl(required(&s.output, "dataset output")?, &records)?;
            eprintln!("{} records from {} prompts", records.len(), prompt_set.len());
        }
        Command::Align { common, checkpoint, dataset, output, epochs, learning_rate, beta, gamma, dpo } => {
            let mut cfg = load_config(&common)?;
            let s = &mut cfg.align;
            set_path(&mut s.checkpoint, checkpoint);
            set_path(&mut s.dataset, dataset);
            set_path(&mut s.output, output);
            set(&mut s.epochs, epochs);
            set(&mut s.learning_rate, learning_rate);
            set(&mut s.beta, beta);
            set(&mut s.gamma, gamma);
            if dpo {
                s.mode = AlignMode::Dpo;
            }
            if s.beta.is_empty() || s.gamma.is_empty() {
                return Err(PipelineError::config("beta and gamma grids must be non-empty"));
            }
            let reference = load_checkpoint(required(&s.checkpoint, "align checkpoint")?)?.into_policy()?;
            let dataset_path = required(&s.dataset, "align dataset")?;
            if !dataset_path.exists() {
                return Err(PipelineError::config(format!("dataset {} does not exist", dataset_path.display())));
            }
            let records = read_jsonl(dataset_path)?;
            let out = required(&s.output, "align output")?;
            let single = s.beta.len() * s.gamma.len() == 1;
            let mut failure = None;
            for &b in &s.beta {
                for &g in &s.gamma {
                    let run_cfg = AlignConfig {
                        mode: s.mode,
                        epochs: s.epochs,
                        batch_size: s.batch_size,
                        learning_rate: s.learning_rate,
                        beta: b,
                        gamma: g,
                        dpo_temperature: s.dpo_temperature,
                    };
                    let outcome = run_align(&reference, &records, &run_cfg, common.seed)?;
                    let path = grid_path(out, b, g, single);
                    let mut checkpoint = Checkpoint::from_policy(&outcome.policy);
                    checkpoint.metadata.insert("seed".into(), common.seed.to_string());
                    checkpoint.metadata.insert("beta".into(), b.to_string());
                    checkpoint.metadata.insert("gamma".into(), g.to_string());
                    checkpoint.save(&path)?;
                    write_json(&log_path(&path), &outcome.log)?;
                    eprintln!(
                        "beta {b} gamma {g}: loss {:.5} -> {:.5} over {} steps",
                        outcome.log.start_loss,
                        outcome.log.end_loss,
                        outcome.log.steps.len()
                    );
                    if let Some(f) = outcome.log.failure {
                        failure = Some(format!("beta {b} gamma {g}: {f}; kept the last good checkpoint"));
                    }
                }
            }
            if let Some(f) = failure {
                return Err(PipelineError::Training(f));
            }
        }
        Command::Sample { common, checkpoint, prompts, n, output } => {
            let mut cfg = load_config(&common)?;
            let s = &mut cfg.sample;
            set_path(&mut s.checkpoint, checkpoint);
            prompts.apply(&mut s.prompts);
            set(&mut s.n, n);
            set_path(&mut s.output, output);
            let policy = load_checkpoint(required(&s.checkpoint, "sample checkpoint")?)?.into_policy()?;
            let groups = sample_smiles(&policy, &s.prompts.load()?, s.n, s.temperature, common.seed)?;
            let lines: Vec<String> = groups
                .iter()
                .flat_map(|g| g.samples.iter().map(move |y| format!("{}\t{y}", g.prompt)))
                .collect();
            match &s.output {
                Some(p) => write_lines(p, &lines)?,
                None => lines.iter().for_each(|l| println!("{l}")),
            }
        }
        Command::Metrics { common, checkpoint, reference, prompts, n_samples, output } => {
            let mut cfg = load_config(&common)?;
            let s = &mut cfg.metrics;
            set_path(&mut s.checkpoint, checkpoint);
            set_path(&mut s.reference, reference);
            prompts.apply(&mut s.prompts);
            set(&mut s.settings.n_samples, n_samples);
            set_path(&mut s.output, output);
            let policy = load_checkpoint(required(&s.checkpoint, "metrics checkpoint")?)?.into_policy()?;
            let ctx = property_context(s.properties_csv.as_deref())?;
            let prompt_set = s.prompts.load()?;
            let mut report = emit_metrics(&policy, &prompt_set, &s.settings, &ctx, common.seed)?;
            if let Some(r) = &s.reference {
                let reference = load_checkpoint(r)?.into_policy()?;
                let base = emit_metrics(&reference, &prompt_set, &s.settings, &ctx, common.seed)?;
                report.deltas = Some(prompt_deltas(&report, &base)?);
            }
            match &s.output {
                Some(p) => write_json(p, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
