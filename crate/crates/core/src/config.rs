//! Flat JSON run configuration.
//!
//! Every key lives at the top level and unknown keys are rejected, so a typo
//! in a weight name fails loudly instead of silently running the default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::meta::{Method, MetaGradient, Optimizer, TrainConfig};
use crate::nn::{Activation, Granularity};
use crate::structure::StructureWeights;
use crate::taskgen::{Range, TaskFamily, TaskGenConfig};
use crate::{Error, Result};

/// Keys that must appear in every config file.
pub const REQUIRED_FIELDS: [&str; 5] = ["family", "hidden", "inner_lr", "outer_lr", "iterations"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Constraint {
    Fr,
    Pl,
    Se,
}

impl Constraint {
    pub fn name(self) -> &'static str {
        match self {
            Constraint::Fr => "fr",
            Constraint::Pl => "pl",
            Constraint::Se => "se",
        }
    }
}

impl std::str::FromStr for Constraint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fr" => Ok(Constraint::Fr),
            "pl" => Ok(Constraint::Pl),
            "se" => Ok(Constraint::Se),
            other => Err(Error::config(format!("unknown constraint `{other}` (expected fr, pl or se)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub family: TaskFamily,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub inner_lr: f64,
    pub inner_mask_lr: Option<f64>,
    pub outer_lr: f64,
    pub mask_lr: f64,
    pub inner_steps: usize,
    pub meta_batch: usize,
    pub iterations: usize,
    pub seed: u64,

    pub lambda_fr: f64,
    pub lambda_pl: f64,
    pub lambda_se: f64,
    pub frugality_c: f64,
    pub frugality_gamma: f64,
    pub hinge_mu: f64,
    pub sensitivity_eps: f64,
    pub threshold: f64,
    pub hebbian_temperature: f64,
    pub hebbian_decay: f64,
    pub mask_init_logit: f64,
    pub granularity: Granularity,
    pub method: Method,
    pub meta_gradient: MetaGradient,
    pub optimizer: Optimizer,

    pub k_shot: usize,
    pub query_count: usize,
    pub n_way: usize,
    pub input_dim: usize,
    pub amplitude: [f64; 2],
    pub frequency: [f64; 2],
    pub phase: [f64; 2],
    pub x_range: [f64; 2],
    pub coefficient: [f64; 2],
    pub noise_sigma: f64,
    pub separation: f64,
    pub pool_size: usize,
    pub augmentations: usize,
    pub blocks: usize,
    pub aug_sigma: f64,
    pub aug_scaling: bool,

    pub eval_tasks: usize,
    pub eval_adapt_steps: usize,

    pub out_dir: Option<String>,
    pub metrics_file: String,
    /// Write a checkpoint every this many iterations.
    pub checkpoint_every: usize,
    pub disable: Vec<Constraint>,
}

fn pair(r: Range) -> [f64; 2] {
    [r.min, r.max]
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let g = &t.tasks;
        let s = t.structure;
        Self {
            family: g.family,
            hidden: t.hidden.clone(),
            activation: t.activation,
            inner_lr: t.inner_lr,
            inner_mask_lr: t.inner_mask_lr,
            outer_lr: t.outer_lr,
            mask_lr: t.mask_lr,
            inner_steps: t.inner_steps,
            meta_batch: t.meta_batch,
            iterations: t.iterations,
            seed: t.seed,
            lambda_fr: s.lambda_fr,
            lambda_pl: s.lambda_pl,
            lambda_se: s.lambda_se,
            frugality_c: s.c,
            frugality_gamma: s.gamma,
            hinge_mu: s.mu,
            sensitivity_eps: s.eps_s,
            threshold: t.threshold,
            hebbian_temperature: t.hebbian_temperature,
            hebbian_decay: t.hebbian_decay,
            mask_init_logit: t.mask_init_logit,
            granularity: t.granularity,
            method: t.method,
            meta_gradient: t.meta_gradient,
            optimizer: t.optimizer,
            k_shot: g.k_shot,
            query_count: g.query_count,
            n_way: g.n_way,
            input_dim: g.input_dim,
            amplitude: pair(g.amplitude),
            frequency: pair(g.frequency),
            phase: pair(g.phase),
            x_range: pair(g.x_range),
            coefficient: pair(g.coefficient),
            noise_sigma: g.noise_sigma,
            separation: g.separation,
            pool_size: g.pool_size,
            augmentations: g.augmentations,
            blocks: g.blocks,
            aug_sigma: g.aug_sigma,
            aug_scaling: g.aug_scaling,
            eval_tasks: t.eval_tasks,
            eval_adapt_steps: t.eval_adapt_steps,
            out_dir: None,
            metrics_file: "metrics.csv".into(),
            checkpoint_every: 1000,
            disable: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::config(format!("config is not valid JSON: {e}")))?;
        let map = value.as_object().ok_or_else(|| Error::config("config must be a JSON object"))?;
        for key in REQUIRED_FIELDS {
            if !map.contains_key(key) {
                return Err(Error::config(format!("missing required field `{key}`")));
            }
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.checkpoint_every == 0 {
            return Err(Error::config("checkpoint_every must be >= 1"));
        }
        if self.metrics_file.is_empty() || self.metrics_file.contains(['/', '\\']) {
            return Err(Error::config("metrics_file must be a plain file name"));
        }
        if self.eval_tasks == 0 {
            return Err(Error::config("eval_tasks must be >= 1"));
        }
        self.train_config().validate()
    }

    /// The same run with one more constraint switched off. The weight itself
    /// is zeroed too so the echo shows what actually ran.
    pub fn ablated(&self, c: Constraint) -> Self {
        let mut out = self.clone();
        if !out.disable.contains(&c) {
            out.disable.push(c);
            out.disable.sort();
        }
        match c {
            Constraint::Fr => out.lambda_fr = 0.0,
            Constraint::Pl => out.lambda_pl = 0.0,
            Constraint::Se => out.lambda_se = 0.0,
        }
        out
    }

    pub fn structure(&self) -> StructureWeights {
        let off = |c: Constraint, v: f64| if self.disable.contains(&c) { 0.0 } else { v };
        StructureWeights {
            lambda_fr: off(Constraint::Fr, self.lambda_fr),
            lambda_pl: off(Constraint::Pl, self.lambda_pl),
            lambda_se: off(Constraint::Se, self.lambda_se),
            c: self.frugality_c,
            gamma: self.frugality_gamma,
            mu: self.hinge_mu,
            eps_s: self.sensitivity_eps,
        }
    }

    pub fn task_config(&self) -> TaskGenConfig {
        let range = |p: [f64; 2]| Range::new(p[0], p[1]);
        TaskGenConfig {
            seed: self.seed,
            family: self.family,
            k_shot: self.k_shot,
            query_count: self.query_count,
            n_way: self.n_way,
            input_dim: self.input_dim,
            amplitude: range(self.amplitude),
            frequency: range(self.frequency),
            phase: range(self.phase),
            x_range: range(self.x_range),
            coefficient: range(self.coefficient),
            noise_sigma: self.noise_sigma,
            separation: self.separation,
            pool_size: self.pool_size,
            augmentations: self.augmentations,
            blocks: self.blocks,
            aug_sigma: self.aug_sigma,
            aug_scaling: self.aug_scaling,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            hidden: self.hidden.clone(),
            activation: self.activation,
            inner_lr: self.inner_lr,
            inner_mask_lr: self.inner_mask_lr,
            outer_lr: self.outer_lr,
            mask_lr: self.mask_lr,
            inner_steps: self.inner_steps,
            meta_batch: self.meta_batch,
            iterations: self.iterations,
            structure: self.structure(),
            threshold: self.threshold,
            hebbian_temperature: self.hebbian_temperature,
            hebbian_decay: self.hebbian_decay,
            mask_init_logit: self.mask_init_logit,
            granularity: self.granularity,
            method: self.method,
            meta_gradient: self.meta_gradient,
            optimizer: self.optimizer,
            seed: self.seed,
            tasks: self.task_config(),
            eval_tasks: self.eval_tasks,
            eval_adapt_steps: self.eval_adapt_steps,
        }
    }
}
