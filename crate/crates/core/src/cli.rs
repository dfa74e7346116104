//! Command-line surface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{Constraint, RunConfig};
use crate::io::write_atomic;
use crate::meta::{self, EvalSummary, MetaState, TrainConfig};
use crate::metrics::{metrics_csv, timing_csv, MetricsRecord};
use crate::nn::{max_relative_error, numeric_grads, Mask};
use crate::par::Schedule;
use crate::plot::metrics_svg;
use crate::selection::{CandidateModel, SelectionTable};
use crate::structure::{frugality_bound, mask_probs, sensitivity_scores, StructureProblem};
use crate::taskgen;
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_CHECKPOINT: i32 = 4;

pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(name = "neuronml", version, about = "Neuromodulated meta-learning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Meta-train from a config file.
    Train(TrainArgs),
    /// Adapt a checkpoint to fresh tasks and report the query metric.
    Eval(EvalArgs),
    /// Train the full config and a copy with one constraint switched off.
    Ablate(AblateArgs),
    /// Compare analytic gradients against central differences.
    Gradcheck(GradcheckArgs),
    /// Posterior over candidate models from their log-likelihoods.
    Select(SelectArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write metrics.svg.
    #[arg(long)]
    pub plot: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Write the task batches of the first N iterations under tasks/.
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub dump_tasks: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    /// Task generator settings; defaults to the checkpoint's own config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub adapt_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_parser = parse_constraint)]
    pub disable: Constraint,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Perturb one analytic gradient entry (negative control).
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// JSON file with `samples` and a `candidates` list.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `samples` from the file.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_constraint(s: &str) -> Result<Constraint, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Checkpoint(_) => EXIT_CHECKPOINT,
        _ => EXIT_CONFIG,
    }
}

pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a).map(|_| EXIT_OK),
        Command::Eval(a) => cmd_eval(&a).map(|_| EXIT_OK),
        Command::Ablate(a) => cmd_ablate(&a).map(|_| EXIT_OK),
        Command::Gradcheck(a) => cmd_gradcheck(&a).map(|r| if r.passed { EXIT_OK } else { EXIT_CHECK_FAILED }),
        Command::Select(a) => cmd_select(&a).map(|_| EXIT_OK),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load_run_config(path: &Path, seed: Option<u64>) -> crate::Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(flag: Option<&Path>, cfg: &RunConfig) -> crate::Result<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| Error::Config("no output directory: pass --out or set out_dir".into()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> crate::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: String,
    pub error: Option<String>,
    pub iterations: usize,
    pub final_metrics: Option<MetricsRecord>,
    /// Masked l1 norm of the final shared weights.
    pub final_l1: Option<f64>,
    pub frugality_bound: f64,
    pub eval: Option<EvalSummary>,
    pub config: RunConfig,
}

/// Trains `cfg` and writes its artifacts under `dir`. Divergence still
/// flushes the metrics recorded so far before the error is returned.
pub fn run_training(cfg: &RunConfig, dir: &Path, plot: bool, dump_tasks: usize) -> crate::Result<RunSummary> {
    let tc = cfg.train_config();
    tc.validate()?;
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join("config.json"), cfg)?;

    let every = cfg.checkpoint_every as u64;
    let outcome = meta::train_with(&tc, Schedule::default(), |state, record| {
        if (record.iteration as usize) < dump_tasks {
            let tasks = taskgen::sample_batch(&tc.tasks, taskgen::domain::TRAIN, record.iteration, tc.meta_batch)?;
            let name = format!("batch-{:06}.json", record.iteration);
            taskgen::write_task_dump(&dir.join("tasks").join(name), &tc.tasks, &tasks)?;
        }
        if state.iteration % every == 0 {
            Checkpoint::new(cfg, state).save(&dir.join(format!("checkpoint-{:06}.json", state.iteration)))?;
        }
        Ok(())
    });

    let (state, records, failure) = match outcome {
        Ok((state, records)) => (Some(state), records, None),
        Err(f) => (f.state, f.metrics, Some(f.error)),
    };
    write_atomic(&dir.join(&cfg.metrics_file), metrics_csv(&records).as_bytes())?;
    write_atomic(&dir.join("timing.csv"), timing_csv(&records).as_bytes())?;
    if plot {
        write_atomic(&dir.join("metrics.svg"), metrics_svg(&records).as_bytes())?;
    }

    let owned = MetaState::init(&tc)?.ownership().owned_count();
    let mut summary = RunSummary {
        status: if failure.is_some() { "diverged".into() } else { "ok".into() },
        error: failure.as_ref().map(|e| e.to_string()),
        iterations: records.len(),
        final_metrics: records.last().cloned(),
        final_l1: state.as_ref().map(|s| s.masked_l1(&tc)),
        frugality_bound: frugality_bound(owned, tc.tasks.task_size(), tc.structure.c, tc.structure.gamma),
        eval: None,
        config: cfg.clone(),
    };
    if let Some(err) = failure {
        write_json(&dir.join("summary.json"), &summary)?;
        return Err(err);
    }
    let state = state.expect("successful run returns its state");
    Checkpoint::new(cfg, &state).save(&dir.join("checkpoint.json"))?;
    let tasks = meta::eval_tasks(&tc.tasks, tc.eval_tasks)?;
    summary.eval = Some(meta::evaluate(&state, &tasks, &tc, tc.eval_adapt_steps)?);
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

pub fn cmd_train(a: &TrainArgs) -> crate::Result<RunSummary> {
    let cfg = load_run_config(&a.run.config, a.run.seed)?;
    let dir = out_dir(a.run.out.as_deref(), &cfg)?;
    let summary = run_training(&cfg, &dir, a.run.plot, a.dump_tasks)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(summary)
}

pub fn cmd_eval(a: &EvalArgs) -> crate::Result<EvalSummary> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let mut tc: TrainConfig = ck.config.train_config();
    if let Some(path) = &a.config {
        let given = RunConfig::load(path)?;
        tc.tasks = given.task_config();
        tc.eval_tasks = given.eval_tasks;
        tc.eval_adapt_steps = given.eval_adapt_steps;
    }
    if let Some(s) = a.seed {
        tc.tasks.seed = s;
    }
    if tc.dims() != ck.state.net.dims() {
        return Err(Error::Config("task dimensions do not match the checkpoint network".into()));
    }
    let steps = a.adapt_steps.unwrap_or(tc.eval_adapt_steps);
    let tasks = meta::eval_tasks(&tc.tasks, tc.eval_tasks)?;
    let summary = meta::evaluate(&ck.state, &tasks, &tc, steps)?;
    let dir = match &a.out {
        Some(d) => d.clone(),
        None => a.checkpoint.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(".")),
    };
    write_json(&dir.join("eval.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub disabled: Constraint,
    pub full: RunSummary,
    pub ablated: RunSummary,
    /// Ablated minus full, on the final evaluation metric.
    pub eval_metric_delta: f64,
    pub meta_loss_delta: f64,
    pub task_checksums_match: bool,
}

pub fn cmd_ablate(a: &AblateArgs) -> crate::Result<AblationSummary> {
    let full_cfg = load_run_config(&a.run.config, a.run.seed)?;
    let ablated_cfg = full_cfg.ablated(a.disable);
    let dir = out_dir(a.run.out.as_deref(), &full_cfg)?;
    let full = run_training(&full_cfg, &dir.join("full"), a.run.plot, 0)?;
    let ablated = run_training(&ablated_cfg, &dir.join(format!("no-{}", a.disable.name())), a.run.plot, 0)?;

    let checksums = |sub: &str| std::fs::read_to_string(dir.join(sub).join(&full_cfg.metrics_file));
    let column = |text: String| text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap_or("").to_string()).collect::<Vec<_>>();
    let task_checksums_match = column(checksums("full")?) == column(checksums(&format!("no-{}", a.disable.name()))?);

    let eval = |s: &RunSummary| s.eval.as_ref().map(|e| e.metric_mean).unwrap_or(f64::NAN);
    let loss = |s: &RunSummary| s.final_metrics.as_ref().map(|m| m.meta_loss).unwrap_or(f64::NAN);
    let summary = AblationSummary {
        disabled: a.disable,
        eval_metric_delta: eval(&ablated) - eval(&full),
        meta_loss_delta: loss(&ablated) - loss(&full),
        task_checksums_match,
        full,
        ablated,
    };
    write_json(&dir.join("ablation.json"), &summary)?;
    println!(
        "disabled {}: eval metric {:.6} -> {:.6} (delta {:+.6}), task checksums match: {}",
        a.disable.name(),
        eval(&summary.full),
        eval(&summary.ablated),
        summary.eval_metric_delta,
        summary.task_checksums_match
    );
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub parameters: usize,
    pub weight_error: f64,
    pub mask_logit_error: f64,
    pub structure_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Gradient check on the config's initial network and its first training
/// task. Mask logits and tracker state are jittered so every term is live.
pub fn gradcheck(cfg: &RunConfig, corrupt: bool) -> crate::Result<GradcheckReport> {
    let tc = cfg.train_config();
    tc.validate()?;
    let mut state = MetaState::init(&tc)?;
    if state.net.param_count() > 10_000 {
        return Err(Error::Precondition("gradient check limited to 10^4 parameters".into()));
    }
    let task = taskgen::sample_batch(&tc.tasks, taskgen::domain::TRAIN, 0, 1)?.remove(0);
    let split = task.all_data()?;
    let g = state.mask.granularity;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6772_6164);
    let logits: Vec<f64> = state.mask.logits.iter().map(|_| rng.random_range(-1.5..1.5)).collect();
    state.tracker.importance.iter_mut().for_each(|l| *l = rng.random_range(0.0..1.0));
    const STEP: f64 = 1e-5;

    let (_, mut dense) = state.net.loss_and_grads(Mask::Dense, &split)?;
    if corrupt {
        dense.weights[0] += 1e-3 * (1.0 + dense.weights[0].abs());
    }
    let weight_error = max_relative_error(&dense.weights, &numeric_grads(&state.net, None, &split, STEP)?.weights);

    let probs = mask_probs(&logits);
    let (_, masked) = state.net.loss_and_grads(Mask::new(g, &probs), &split)?;
    let numeric = numeric_grads(&state.net, Some((g, &logits)), &split, STEP)?;
    let mask_logit_error = max_relative_error(&masked.weights, &numeric.weights)
        .max(max_relative_error(&masked.mask_logits, &numeric.mask_logits));

    let ownership = state.ownership();
    let scores = sensitivity_scores(&state.net, Mask::new(g, &probs), &split, &ownership)?;
    let others: Vec<Vec<f64>> = (0..2).map(|_| logits.iter().map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    let hebbian = state.tracker.probs();
    let problem = StructureProblem {
        weights: state.net.params(),
        ownership: &ownership,
        others: others.iter().map(Vec::as_slice).collect(),
        hebbian: &hebbian,
        scores: &scores,
        bound: frugality_bound(ownership.owned_count(), split.len(), tc.structure.c, tc.structure.gamma),
        threshold: tc.threshold,
    };
    let structure_error = max_relative_error(
        &problem.logit_grad(&logits, &tc.structure)?,
        &problem.numeric_logit_grad(&logits, &tc.structure, STEP)?,
    );

    let passed = [weight_error, mask_logit_error, structure_error].iter().all(|e| *e < GRADCHECK_TOLERANCE);
    Ok(GradcheckReport {
        parameters: state.net.param_count(),
        weight_error,
        mask_logit_error,
        structure_error,
        tolerance: GRADCHECK_TOLERANCE,
        passed,
    })
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> crate::Result<GradcheckReport> {
    let cfg = load_run_config(&a.config, a.seed)?;
    let report = gradcheck(&cfg, a.corrupt_gradient)?;
    println!("parameters               {}", report.parameters);
    println!("weight gradient          {:.3e}", report.weight_error);
    println!("mask-logit gradient      {:.3e}", report.mask_logit_error);
    println!("structure gradient       {:.3e}", report.structure_error);
    println!("{} (tolerance {:.0e})", if report.passed { "PASS" } else { "FAIL" }, report.tolerance);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateFile {
    pub samples: Option<usize>,
    pub candidates: Vec<CandidateModel>,
}

pub fn cmd_select(a: &SelectArgs) -> crate::Result<SelectionTable> {
    let text = std::fs::read_to_string(&a.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", a.config.display())))?;
    let file: CandidateFile = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    let samples = a
        .samples
        .or(file.samples)
        .ok_or_else(|| Error::Config("missing required field `samples`".into()))?;
    let table = SelectionTable::build(&file.candidates, samples)?;
    print!("{}", table.to_text());
    if let Some(dir) = &a.out {
        write_json(&dir.join("selection.json"), &table)?;
    }
    Ok(table)
}
