//! Bi-level meta-training.
//!
//! One meta-iteration samples a batch of tasks, adapts a copy of the shared
//! weights and mask logits to each task's support set, then
//!
//! 1. moves the shared weights along the mean query-loss gradient taken at the
//!    adapted points (first-order), leaving the mask alone;
//! 2. moves the shared mask logits along the mean structure-objective gradient
//!    taken at the adapted points, leaving the weights alone, and folds the
//!    batch into the Hebbian tracker.
//!
//! The per-task adaptations are independent and run through [`crate::par`];
//! all reductions happen afterwards in task-index order.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::{mean_std, MetricsRecord};
use crate::nn::{Activation, GradBundle, Granularity, LossKind, Mask, Network, Ownership, Split, Targets};
use crate::par::{self, Schedule};
use crate::structure::{
    activation_set, density, frugality_bound, frugality_loss, mask_probs, pairwise_hard_overlap, scores_from_grads,
    HebbianTracker, StructureMask, StructureProblem, StructureTerms, StructureWeights,
};
use crate::taskgen::{self, Task, TaskDigest, TaskGenConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    NeuronMl,
    /// First-order MAML: mask pinned dense, no structure step.
    Maml,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetaGradient {
    #[default]
    FirstOrder,
    /// Differentiates through the inner loop with central differences over
    /// every weight. Only allowed for networks with at most 100 parameters.
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam,
}

pub const EXACT_META_GRADIENT_LIMIT: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Inner step size α.
    pub inner_lr: f64,
    /// Inner step size for the mask logits; `None` reuses α.
    pub inner_mask_lr: Option<f64>,
    /// Outer step size β.
    pub outer_lr: f64,
    /// Mask step size η.
    pub mask_lr: f64,
    pub inner_steps: usize,
    pub meta_batch: usize,
    pub iterations: usize,
    pub structure: StructureWeights,
    /// Activation threshold τ_act.
    pub threshold: f64,
    pub hebbian_temperature: f64,
    pub hebbian_decay: f64,
    pub mask_init_logit: f64,
    pub granularity: Granularity,
    pub method: Method,
    pub meta_gradient: MetaGradient,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub tasks: TaskGenConfig,
    pub eval_tasks: usize,
    pub eval_adapt_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![40, 40],
            activation: Activation::Tanh,
            inner_lr: 0.01,
            inner_mask_lr: None,
            outer_lr: 0.001,
            mask_lr: 0.001,
            inner_steps: 1,
            meta_batch: 4,
            iterations: 1000,
            structure: StructureWeights::default(),
            threshold: 0.5,
            hebbian_temperature: 1.0,
            hebbian_decay: 0.1,
            mask_init_logit: 2.0,
            granularity: Granularity::PerUnit,
            method: Method::NeuronMl,
            meta_gradient: MetaGradient::FirstOrder,
            optimizer: Optimizer::Sgd,
            seed: 0,
            tasks: TaskGenConfig::default(),
            eval_tasks: 20,
            eval_adapt_steps: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("inner_lr", self.inner_lr),
            ("outer_lr", self.outer_lr),
            ("mask_lr", self.mask_lr),
            ("hebbian_temperature", self.hebbian_temperature),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be > 0")));
            }
        }
        if let Some(v) = self.inner_mask_lr {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config("inner_mask_lr must be >= 0"));
            }
        }
        if self.meta_batch == 0 {
            return Err(Error::config("meta_batch must be >= 1"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config("threshold must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.hebbian_decay) {
            return Err(Error::config("hebbian_decay must lie in [0, 1]"));
        }
        if !self.mask_init_logit.is_finite() {
            return Err(Error::config("mask_init_logit must be finite"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("network needs at least one hidden layer of positive width"));
        }
        self.structure.validate()?;
        self.tasks.validate()?;
        if self.meta_gradient == MetaGradient::FiniteDifference {
            let params = self.dims().windows(2).map(|w| w[1] * (w[0] + 1)).sum::<usize>();
            if params > EXACT_META_GRADIENT_LIMIT {
                return Err(Error::config(format!(
                    "finite-difference meta-gradient needs <= {EXACT_META_GRADIENT_LIMIT} parameters, network has {params}"
                )));
            }
        }
        Ok(())
    }

    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.tasks.input_width()];
        dims.extend(&self.hidden);
        dims.push(self.tasks.output_width());
        dims
    }

    /// Whether the structure mask takes part in the forward pass. With every
    /// structure weight at zero there is nothing to modulate and the model
    /// runs dense, which makes the loop coincide with first-order MAML.
    pub fn mask_active(&self) -> bool {
        self.method == Method::NeuronMl && self.structure.any_active()
    }

    pub fn inner_mask_step(&self) -> f64 {
        self.inner_mask_lr.unwrap_or(self.inner_lr)
    }

    pub fn loss_kind(&self) -> LossKind {
        self.tasks.family.loss_kind()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaState {
    pub net: Network,
    pub mask: StructureMask,
    pub tracker: HebbianTracker,
    pub iteration: u64,
    pub seed: u64,
    pub adam: Option<AdamState>,
}

impl MetaState {
    pub fn init(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let net = Network::init(&cfg.dims(), cfg.activation, &mut rng)?;
        let units = net.mask_len(cfg.granularity);
        Ok(Self {
            mask: StructureMask::new(units, cfg.mask_init_logit, cfg.threshold, cfg.granularity),
            tracker: HebbianTracker::new(units, cfg.hebbian_decay, cfg.hebbian_temperature),
            net,
            iteration: 0,
            seed: cfg.seed,
            adam: None,
        })
    }

    pub fn ownership(&self) -> Ownership {
        self.net.ownership(self.mask.granularity)
    }

    /// Mask probabilities the forward pass uses under `cfg`; all ones when the
    /// mask is inactive.
    pub fn effective_probs(&self, cfg: &TrainConfig) -> Vec<f64> {
        if cfg.mask_active() {
            self.mask.probs()
        } else {
            vec![1.0; self.mask.logits.len()]
        }
    }

    /// `∥apply_mask(θ, probs)∥₁` over the masked parameters.
    pub fn masked_l1(&self, cfg: &TrainConfig) -> f64 {
        frugality_loss(self.net.params(), &self.effective_probs(cfg), &self.ownership(), 0.0, 0.0)
            .map(|f| f.l1)
            .unwrap_or(f64::NAN)
    }
}

/// `θ_M`: every owned parameter scaled by its unit's probability.
pub fn apply_mask(weights: &[f64], probs: &[f64], ownership: &Ownership) -> Result<Vec<f64>> {
    if weights.len() != ownership.owner().len() || probs.len() != ownership.unit_count() {
        return Err(Error::shape("mask does not align with the weights"));
    }
    Ok(weights
        .iter()
        .zip(ownership.owner())
        .map(|(w, o)| match o {
            Some(u) => w * probs[*u],
            None => *w,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerResult {
    pub weights: Vec<f64>,
    pub logits: Vec<f64>,
    /// Support loss before each step and after the last one.
    pub support_trace: Vec<f64>,
    pub query_loss: f64,
    /// Query MSE (regression) or accuracy (classification).
    pub query_metric: f64,
    pub query_grads: GradBundle,
    /// Sensitivity scores on the full task data at the adapted point.
    pub scores: Vec<f64>,
    /// Mask probabilities used at the adapted point.
    pub probs: Vec<f64>,
    pub active: Vec<bool>,
    pub task_size: usize,
    /// Filled in by [`mask_step`].
    pub structure: Option<StructureTerms>,
}

fn probs_for(cfg: &TrainConfig, logits: &[f64]) -> Vec<f64> {
    if cfg.mask_active() {
        mask_probs(logits)
    } else {
        vec![1.0; logits.len()]
    }
}

fn mask_for<'a>(cfg: &TrainConfig, granularity: Granularity, probs: &'a [f64]) -> Mask<'a> {
    if cfg.mask_active() {
        Mask::new(granularity, probs)
    } else {
        Mask::Dense
    }
}

fn divergence(message: impl Into<String>, trace: Vec<f64>) -> Error {
    Error::Divergence { message: message.into(), trace }
}

pub fn query_metric(net: &Network, mask: Mask<'_>, split: &Split, loss: f64) -> Result<f64> {
    match &split.targets {
        Targets::Values(_) => Ok(loss),
        Targets::Classes(classes) => {
            let out = net.forward(mask, &split.inputs)?;
            let correct = classes
                .iter()
                .enumerate()
                .filter(|(r, &c)| argmax(out.row(*r)) == c)
                .count();
            Ok(correct as f64 / classes.len() as f64)
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// Adapts copies of the shared weights and mask logits to `task` with
/// `steps` full-batch gradient steps on the support loss. The shared state is
/// not touched.
pub fn inner_adapt(state: &MetaState, task: &Task, cfg: &TrainConfig, steps: usize) -> Result<InnerResult> {
    let granularity = state.mask.granularity;
    let mut net = state.net.clone();
    let mut logits = state.mask.logits.clone();
    let mask_on = cfg.mask_active();
    let mut trace = Vec::with_capacity(steps + 1);

    for _ in 0..steps {
        let probs = probs_for(cfg, &logits);
        let (loss, grads) = net.loss_and_grads(mask_for(cfg, granularity, &probs), &task.support)?;
        trace.push(loss);
        if !loss.is_finite() || !grads.is_finite() {
            return Err(divergence("support loss became non-finite during adaptation", trace));
        }
        for (w, g) in net.params_mut().iter_mut().zip(&grads.weights) {
            *w -= cfg.inner_lr * g;
        }
        if mask_on {
            let step = cfg.inner_mask_step();
            for (l, g) in logits.iter_mut().zip(&grads.mask_logits) {
                *l -= step * g;
            }
        }
    }

    let probs = probs_for(cfg, &logits);
    let mask = mask_for(cfg, granularity, &probs);
    let final_support = net.loss(mask, &task.support)?;
    trace.push(final_support);
    if !final_support.is_finite() {
        return Err(divergence("support loss became non-finite during adaptation", trace));
    }

    let (query_loss, query_grads) = net.loss_and_grads(mask, &task.query)?;
    if !query_loss.is_finite() || !query_grads.is_finite() {
        trace.push(query_loss);
        return Err(divergence("query loss is non-finite at the adapted point", trace));
    }
    let metric = query_metric(&net, mask, &task.query, query_loss)?;

    let all = task.all_data()?;
    let (_, full_grads) = net.loss_and_grads(mask, &all)?;
    let scores = scores_from_grads(&full_grads.weights, &net.ownership(granularity));

    Ok(InnerResult {
        active: activation_set(&probs, cfg.threshold),
        weights: net.params().to_vec(),
        logits,
        support_trace: trace,
        query_loss,
        query_metric: metric,
        query_grads,
        scores,
        probs,
        task_size: task.len(),
        structure: None,
    })
}

pub fn inner_adapt_batch(
    state: &MetaState,
    tasks: &[Task],
    cfg: &TrainConfig,
    steps: usize,
    schedule: Schedule,
) -> Result<Vec<InnerResult>> {
    par::map_indexed_with(schedule, tasks.len(), |i| inner_adapt(state, &tasks[i], cfg, steps))
        .into_iter()
        .collect()
}

/// Mean query loss after adapting from `params` (mask logits from `state`).
fn adapted_query_loss(state: &MetaState, params: &[f64], tasks: &[Task], cfg: &TrainConfig) -> Result<f64> {
    let mut probe = state.clone();
    probe.net.set_params(params)?;
    let mut total = 0.0;
    for t in tasks {
        total += inner_adapt(&probe, t, cfg, cfg.inner_steps)?.query_loss;
    }
    Ok(total / tasks.len() as f64)
}

fn meta_gradient(state: &MetaState, results: &[InnerResult], tasks: &[Task], cfg: &TrainConfig) -> Result<Vec<f64>> {
    let n = state.net.param_count();
    match cfg.meta_gradient {
        MetaGradient::FirstOrder => {
            let mut g = vec![0.0; n];
            for r in results {
                for (acc, v) in g.iter_mut().zip(&r.query_grads.weights) {
                    *acc += v;
                }
            }
            let scale = 1.0 / results.len() as f64;
            g.iter_mut().for_each(|v| *v *= scale);
            Ok(g)
        }
        MetaGradient::FiniteDifference => {
            if n > EXACT_META_GRADIENT_LIMIT {
                return Err(Error::config("finite-difference meta-gradient limited to 100 parameters"));
            }
            if tasks.len() != results.len() {
                return Err(Error::precondition("exact meta-gradient needs the batch tasks"));
            }
            const H: f64 = 1e-5;
            let base = state.net.params().to_vec();
            let grads: Result<Vec<f64>> = par::map_indexed(n, |i| {
                let mut p = base.clone();
                p[i] = base[i] + H;
                let up = adapted_query_loss(state, &p, tasks, cfg)?;
                p[i] = base[i] - H;
                let down = adapted_query_loss(state, &p, tasks, cfg)?;
                Ok((up - down) / (2.0 * H))
            })
            .into_iter()
            .collect();
            grads
        }
    }
}

/// First level: shared weights follow the mean query gradient. Mask logits are
/// left untouched.
pub fn outer_weight_step(state: &mut MetaState, results: &[InnerResult], tasks: &[Task], cfg: &TrainConfig) -> Result<()> {
    if results.is_empty() {
        return Err(Error::precondition("outer step needs at least one adapted task"));
    }
    let g = meta_gradient(state, results, tasks, cfg)?;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(divergence("meta-gradient is non-finite", results.iter().map(|r| r.query_loss).collect()));
    }
    match cfg.optimizer {
        Optimizer::Sgd => {
            for (w, v) in state.net.params_mut().iter_mut().zip(&g) {
                *w -= cfg.outer_lr * v;
            }
        }
        Optimizer::Adam => {
            const B1: f64 = 0.9;
            const B2: f64 = 0.999;
            const EPS: f64 = 1e-8;
            let n = g.len();
            let adam = state.adam.get_or_insert_with(|| AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0 });
            adam.t += 1;
            let (c1, c2) = (1.0 - B1.powi(adam.t as i32), 1.0 - B2.powi(adam.t as i32));
            for (i, w) in state.net.params_mut().iter_mut().enumerate() {
                adam.m[i] = B1 * adam.m[i] + (1.0 - B1) * g[i];
                adam.v[i] = B2 * adam.v[i] + (1.0 - B2) * g[i] * g[i];
                *w -= cfg.outer_lr * (adam.m[i] / c1) / ((adam.v[i] / c2).sqrt() + EPS);
            }
        }
    }
    if state.net.params().iter().any(|w| !w.is_finite()) {
        return Err(divergence("weights became non-finite", Vec::new()));
    }
    Ok(())
}

/// Structure terms of every task in the batch, plus each task's gradient with
/// respect to its adapted mask logits.
pub fn batch_structure(
    state: &MetaState,
    results: &[InnerResult],
    cfg: &TrainConfig,
) -> Result<Vec<(StructureTerms, Vec<f64>)>> {
    let ownership = state.ownership();
    let hebbian = state.tracker.probs();
    let d = ownership.owned_count();
    results
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let others: Vec<&[f64]> = results
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, o)| o.probs.as_slice())
                .collect();
            let problem = StructureProblem {
                weights: &r.weights,
                ownership: &ownership,
                others,
                hebbian: &hebbian,
                scores: &r.scores,
                bound: frugality_bound(d, r.task_size, cfg.structure.c, cfg.structure.gamma),
                threshold: cfg.threshold,
            };
            let terms = problem.evaluate_probs(&r.probs, &cfg.structure)?;
            let grad = if cfg.mask_active() {
                problem.logit_grad(&r.logits, &cfg.structure)?
            } else {
                vec![0.0; r.logits.len()]
            };
            Ok((terms, grad))
        })
        .collect()
}

/// Second level: shared mask logits follow the mean structure gradient with
/// the weights held fixed, then the tracker absorbs the batch.
pub fn mask_step(state: &mut MetaState, results: &mut [InnerResult], cfg: &TrainConfig) -> Result<()> {
    if results.is_empty() {
        return Err(Error::precondition("mask step needs at least one adapted task"));
    }
    let per_task = batch_structure(state, results, cfg)?;
    let units = state.mask.logits.len();
    let mut mean = vec![0.0; units];
    for (r, (terms, grad)) in results.iter_mut().zip(&per_task) {
        r.structure = Some(*terms);
        for (m, g) in mean.iter_mut().zip(grad) {
            *m += g / per_task.len() as f64;
        }
    }
    if cfg.mask_active() {
        if mean.iter().any(|g| !g.is_finite()) {
            return Err(divergence("structure gradient is non-finite", Vec::new()));
        }
        for (l, g) in state.mask.logits.iter_mut().zip(&mean) {
            *l -= cfg.mask_lr * g;
        }
    }

    let mut any_active = vec![false; units];
    let mut impact = vec![0.0; units];
    let mut counts = vec![0usize; units];
    for r in results.iter() {
        for u in 0..units {
            if r.active[u] {
                any_active[u] = true;
                impact[u] += r.scores[u];
                counts[u] += 1;
            }
        }
    }
    for (i, c) in impact.iter_mut().zip(&counts) {
        if *c > 0 {
            *i /= *c as f64;
        }
    }
    state.tracker.update(&any_active, &impact)
}

#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub state: Option<MetaState>,
    pub metrics: Vec<MetricsRecord>,
}

impl std::fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} iterations)", self.error, self.metrics.len())
    }
}

impl std::error::Error for TrainFailure {}

impl From<Error> for TrainFailure {
    fn from(error: Error) -> Self {
        TrainFailure { error, state: None, metrics: Vec::new() }
    }
}

pub type TrainOutcome = std::result::Result<(MetaState, Vec<MetricsRecord>), TrainFailure>;

/// Runs one meta-iteration on a pre-sampled batch and returns its record.
pub fn meta_iteration(state: &mut MetaState, tasks: &[Task], cfg: &TrainConfig, schedule: Schedule) -> Result<MetricsRecord> {
    let started = Instant::now();
    let mut results = inner_adapt_batch(state, tasks, cfg, cfg.inner_steps, schedule)?;

    let hebbian = state.tracker.probs();
    let overlap = pairwise_hard_overlap(&results.iter().map(|r| r.active.clone()).collect::<Vec<_>>(), &hebbian);

    outer_weight_step(state, &results, tasks, cfg)?;
    mask_step(state, &mut results, cfg)?;
    state.iteration += 1;

    let n = results.len() as f64;
    let mean = |f: &dyn Fn(&InnerResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    let terms = |r: &InnerResult| r.structure.unwrap_or_default();
    let task_size = results[0].task_size;
    let bound = frugality_bound(state.ownership().owned_count(), task_size, cfg.structure.c, cfg.structure.gamma);
    let l1 = state.masked_l1(cfg);
    let mut digest = TaskDigest::default();
    tasks.iter().for_each(|t| digest.push(t));
    let checksum = digest.finish();

    let record = MetricsRecord {
        iteration: state.iteration - 1,
        meta_loss: mean(&|r| r.query_loss),
        query_metric: mean(&|r| r.query_metric),
        l1,
        frugality_bound: bound,
        violation: (l1 - bound).max(0.0),
        plasticity_soft: mean(&|r| terms(r).plasticity_soft),
        hard_overlap: overlap,
        sensitivity: mean(&|r| terms(r).sensitivity),
        mask_density: mean(&|r| density(&r.active)),
        task_checksum: checksum[..16].to_string(),
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    if !record.is_finite() {
        return Err(divergence("metrics became non-finite", vec![record.meta_loss]));
    }
    Ok(record)
}

/// Full training loop. `observe` sees the state after every iteration and
/// may abort by returning an error.
pub fn train_with<F>(cfg: &TrainConfig, schedule: Schedule, mut observe: F) -> TrainOutcome
where
    F: FnMut(&MetaState, &MetricsRecord) -> Result<()>,
{
    let mut state = MetaState::init(cfg)?;
    let mut metrics = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let step = taskgen::sample_batch(&cfg.tasks, taskgen::domain::TRAIN, it as u64, cfg.meta_batch)
            .and_then(|tasks| meta_iteration(&mut state, &tasks, cfg, schedule))
            .and_then(|record| {
                observe(&state, &record)?;
                Ok(record)
            });
        match step {
            Ok(record) => metrics.push(record),
            Err(error) => return Err(TrainFailure { error, state: Some(state), metrics }),
        }
    }
    Ok((state, metrics))
}

pub fn train(cfg: &TrainConfig) -> TrainOutcome {
    train_with(cfg, Schedule::default(), |_, _| Ok(()))
}

/// First-order MAML on the same loop: the mask stays dense and only the
/// weights are meta-learned. Structure terms are still computed and logged.
pub fn train_maml_baseline(cfg: &TrainConfig) -> TrainOutcome {
    let cfg = TrainConfig { method: Method::Maml, ..cfg.clone() };
    train(&cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub tasks: usize,
    pub adapt_steps: usize,
    pub kind: LossKind,
    pub metric_mean: f64,
    pub metric_std: f64,
    pub loss_mean: f64,
    pub mask_density: f64,
    pub hard_overlap: f64,
}

pub fn evaluate(state: &MetaState, tasks: &[Task], cfg: &TrainConfig, adapt_steps: usize) -> Result<EvalSummary> {
    if tasks.is_empty() {
        return Err(Error::precondition("evaluation needs at least one task"));
    }
    let results = inner_adapt_batch(state, tasks, cfg, adapt_steps, Schedule::default())?;
    let metrics: Vec<f64> = results.iter().map(|r| r.query_metric).collect();
    let (metric_mean, metric_std) = mean_std(&metrics);
    let n = results.len() as f64;
    let sets: Vec<Vec<bool>> = results.iter().map(|r| r.active.clone()).collect();
    Ok(EvalSummary {
        tasks: tasks.len(),
        adapt_steps,
        kind: tasks[0].kind,
        metric_mean,
        metric_std,
        loss_mean: results.iter().map(|r| r.query_loss).sum::<f64>() / n,
        mask_density: sets.iter().map(|s| density(s)).sum::<f64>() / n,
        hard_overlap: pairwise_hard_overlap(&sets, &state.tracker.probs()),
    })
}

/// Fresh held-out tasks for evaluation, independent of the training stream.
pub fn eval_tasks(cfg: &TaskGenConfig, count: usize) -> Result<Vec<Task>> {
    taskgen::sample_batch(cfg, taskgen::domain::EVAL, 0, count)
}
