//! Seeded episode generators.
//!
//! Every task draws from its own ChaCha stream keyed by `(seed, domain,
//! iteration, index)`, so a batch can be generated in any order (or in
//! parallel) and still come out identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::nn::{LossKind, Split, Targets};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskFamily {
    /// `y = A sin(w x + b) + noise`
    Sinusoid,
    /// `y = a x^2 + b x + c + noise`
    Quadratic,
    /// N-way K-shot Gaussian clusters.
    Clusters,
    /// Pseudo-labelled augmentation tasks built from an unlabelled pool.
    SelfSupervised,
}

impl TaskFamily {
    pub fn loss_kind(self) -> LossKind {
        match self {
            TaskFamily::Sinusoid | TaskFamily::Quadratic => LossKind::Regression,
            TaskFamily::Clusters | TaskFamily::SelfSupervised => LossKind::Classification,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) || self.min > self.max {
            return Err(Error::config(format!("{name}: range [{}, {}] is empty", self.min, self.max)));
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.min..=self.max).contains(&v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskGenConfig {
    pub seed: u64,
    pub family: TaskFamily,
    pub k_shot: usize,
    pub query_count: usize,
    pub n_way: usize,
    pub input_dim: usize,
    pub amplitude: Range,
    pub frequency: Range,
    pub phase: Range,
    pub x_range: Range,
    /// Coefficient range for quadratic tasks (shared by a, b, c).
    pub coefficient: Range,
    pub noise_sigma: f64,
    pub separation: f64,
    /// Unlabelled pool size N for self-supervised tasks.
    pub pool_size: usize,
    /// Augmented views per pool item (M).
    pub augmentations: usize,
    /// Blocks per pool (K).
    pub blocks: usize,
    pub aug_sigma: f64,
    pub aug_scaling: bool,
}

impl Default for TaskGenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            family: TaskFamily::Sinusoid,
            k_shot: 5,
            query_count: 10,
            n_way: 5,
            input_dim: 1,
            amplitude: Range::new(0.1, 5.0),
            frequency: Range::new(0.5, 2.0),
            phase: Range::new(0.0, 2.0 * std::f64::consts::PI),
            x_range: Range::new(-5.0, 5.0),
            coefficient: Range::new(-1.0, 1.0),
            noise_sigma: 0.3,
            separation: 3.0,
            pool_size: 20,
            augmentations: 4,
            blocks: 4,
            aug_sigma: 0.1,
            aug_scaling: true,
        }
    }
}

impl TaskGenConfig {
    pub fn validate(&self) -> Result<()> {
        self.amplitude.check("amplitude")?;
        self.frequency.check("frequency")?;
        self.phase.check("phase")?;
        self.x_range.check("x_range")?;
        self.coefficient.check("coefficient")?;
        if self.k_shot == 0 || self.query_count == 0 {
            return Err(Error::config("k_shot and query_count must be positive"));
        }
        if self.input_dim == 0 {
            return Err(Error::config("input_dim must be positive"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config("noise_sigma must be >= 0"));
        }
        if !(self.aug_sigma >= 0.0 && self.aug_sigma.is_finite()) {
            return Err(Error::config("aug_sigma must be >= 0"));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::config("separation must be >= 0"));
        }
        match self.family {
            TaskFamily::Clusters if self.n_way < 2 => Err(Error::config("n_way must be at least 2")),
            TaskFamily::SelfSupervised => self.check_ssl(),
            _ => Ok(()),
        }
    }

    fn check_ssl(&self) -> Result<()> {
        if self.blocks == 0 || self.pool_size == 0 || !self.pool_size.is_multiple_of(self.blocks) {
            return Err(Error::config(format!(
                "pool size {} is not divisible into {} blocks",
                self.pool_size, self.blocks
            )));
        }
        if self.augmentations < 2 {
            return Err(Error::config("augmentation count must be at least 2"));
        }
        if self.pool_size / self.blocks < 2 {
            return Err(Error::config("each block needs at least two items"));
        }
        Ok(())
    }

    /// Input width implied by the family.
    pub fn input_width(&self) -> usize {
        match self.family {
            TaskFamily::Sinusoid | TaskFamily::Quadratic => 1,
            _ => self.input_dim,
        }
    }

    /// Output width implied by the family.
    pub fn output_width(&self) -> usize {
        match self.family {
            TaskFamily::Sinusoid | TaskFamily::Quadratic => 1,
            TaskFamily::Clusters => self.n_way,
            TaskFamily::SelfSupervised => self.pool_size / self.blocks,
        }
    }

    /// Samples per task (support plus query).
    pub fn task_size(&self) -> usize {
        match self.family {
            TaskFamily::Sinusoid | TaskFamily::Quadratic => self.k_shot + self.query_count,
            TaskFamily::Clusters => self.n_way * (self.k_shot + self.query_count),
            TaskFamily::SelfSupervised => (self.pool_size / self.blocks) * self.augmentations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "family")]
pub enum TaskMeta {
    Sinusoid { amplitude: f64, frequency: f64, phase: f64 },
    Quadratic { a: f64, b: f64, c: f64 },
    Clusters { centroids: Vec<Vec<f64>> },
    SelfSupervised { block: usize, items: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub support: Split,
    pub query: Split,
    pub kind: LossKind,
    pub n_way: Option<usize>,
    pub meta: TaskMeta,
}

impl Task {
    /// Support and query stacked, in that order.
    pub fn all_data(&self) -> Result<Split> {
        self.support.concat(&self.query)
    }

    pub fn len(&self) -> usize {
        self.support.len() + self.query.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// SHA-256 over the task's inputs and targets.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        feed_split(&mut h, &self.support);
        feed_split(&mut h, &self.query);
        hex(&h.finalize())
    }
}

fn feed_split(h: &mut Sha256, s: &Split) {
    for v in s.inputs.values() {
        h.update(v.to_le_bytes());
    }
    match &s.targets {
        Targets::Values(t) => t.values().iter().for_each(|v| h.update(v.to_le_bytes())),
        Targets::Classes(c) => c.iter().for_each(|&c| h.update((c as u64).to_le_bytes())),
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Running digest over a task sequence.
#[derive(Debug, Clone, Default)]
pub struct TaskDigest(Sha256);

impl TaskDigest {
    pub fn push(&mut self, task: &Task) {
        feed_split(&mut self.0, &task.support);
        feed_split(&mut self.0, &task.query);
    }

    pub fn finish(self) -> String {
        hex(&self.0.finalize())
    }
}

/// Independent generator stream for one task.
pub fn task_rng(seed: u64, domain: u64, iteration: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, word) in key.chunks_exact_mut(8).zip([seed, domain, iteration, index]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

pub fn sinusoid_value(amplitude: f64, frequency: f64, phase: f64, x: f64) -> f64 {
    amplitude * (frequency * x + phase).sin()
}

fn regression_split(xs: Vec<f64>, ys: Vec<f64>) -> Result<Split> {
    let n = xs.len();
    Split::new(Tensor::matrix(n, 1, xs)?, Targets::Values(Tensor::matrix(n, 1, ys)?))
}

fn noise<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        let z: f64 = StandardNormal.sample(rng);
        sigma * z
    }
}

fn regression_task<R, F>(cfg: &TaskGenConfig, rng: &mut R, f: F, meta: TaskMeta) -> Result<Task>
where
    R: Rng + ?Sized,
    F: Fn(f64) -> f64,
{
    let mut draw = |n: usize| -> Result<Split> {
        let xs: Vec<f64> = (0..n).map(|_| cfg.x_range.sample(rng)).collect();
        let ys = xs.iter().map(|&x| f(x) + noise(cfg.noise_sigma, rng)).collect();
        regression_split(xs, ys)
    };
    let support = draw(cfg.k_shot)?;
    let query = draw(cfg.query_count)?;
    Ok(Task { support, query, kind: LossKind::Regression, n_way: None, meta })
}

pub fn gen_sinusoid_task<R: Rng + ?Sized>(cfg: &TaskGenConfig, rng: &mut R) -> Result<Task> {
    if cfg.family != TaskFamily::Sinusoid {
        return Err(Error::config("sinusoid generator needs family = sinusoid"));
    }
    cfg.validate()?;
    let amplitude = cfg.amplitude.sample(rng);
    let frequency = cfg.frequency.sample(rng);
    let phase = cfg.phase.sample(rng);
    regression_task(
        cfg,
        rng,
        |x| sinusoid_value(amplitude, frequency, phase, x),
        TaskMeta::Sinusoid { amplitude, frequency, phase },
    )
}

pub fn gen_quadratic_task<R: Rng + ?Sized>(cfg: &TaskGenConfig, rng: &mut R) -> Result<Task> {
    if cfg.family != TaskFamily::Quadratic {
        return Err(Error::config("quadratic generator needs family = quadratic"));
    }
    cfg.validate()?;
    let (a, b, c) = (cfg.coefficient.sample(rng), cfg.coefficient.sample(rng), cfg.coefficient.sample(rng));
    regression_task(cfg, rng, |x| a * x * x + b * x + c, TaskMeta::Quadratic { a, b, c })
}

pub fn gen_cluster_task<R: Rng + ?Sized>(cfg: &TaskGenConfig, rng: &mut R) -> Result<Task> {
    if cfg.family != TaskFamily::Clusters {
        return Err(Error::config("cluster generator needs family = clusters"));
    }
    cfg.validate()?;
    let dim = cfg.input_dim;
    let centroids: Vec<Vec<f64>> = (0..cfg.n_way)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * cfg.separation
                })
                .collect()
        })
        .collect();
    let mut draw = |per_class: usize| -> Result<Split> {
        let mut xs = Vec::with_capacity(cfg.n_way * per_class * dim);
        let mut ys = Vec::with_capacity(cfg.n_way * per_class);
        for (class, c) in centroids.iter().enumerate() {
            for _ in 0..per_class {
                xs.extend(c.iter().map(|&m| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + z
                }));
                ys.push(class);
            }
        }
        Split::new(Tensor::matrix(ys.len(), dim, xs)?, Targets::Classes(ys))
    };
    let support = draw(cfg.k_shot)?;
    let query = draw(cfg.query_count)?;
    Ok(Task {
        support,
        query,
        kind: LossKind::Classification,
        n_way: Some(cfg.n_way),
        meta: TaskMeta::Clusters { centroids },
    })
}

/// Splits an unlabelled pool into `K` blocks and turns each block into an
/// `(N/K)`-way task whose classes are the block's items, each represented by
/// `M` augmented views (first `ceil(M/2)` in support, rest in query).
pub fn build_ssl_batch<R: Rng + ?Sized>(pool: &[Vec<f64>], cfg: &TaskGenConfig, rng: &mut R) -> Result<Vec<Task>> {
    let (n, k, m) = (pool.len(), cfg.blocks, cfg.augmentations);
    if k == 0 || n == 0 || n % k != 0 {
        return Err(Error::config(format!("pool size {n} is not divisible into {k} blocks")));
    }
    if m < 2 {
        return Err(Error::config("augmentation count must be at least 2"));
    }
    let dim = pool[0].len();
    if dim == 0 || pool.iter().any(|x| x.len() != dim) {
        return Err(Error::shape("pool vectors must share a positive width"));
    }
    let per_block = n / k;
    let n_support = m.div_ceil(2);
    let aug = Normal::new(0.0, cfg.aug_sigma.max(0.0)).map_err(|e| Error::config(e.to_string()))?;

    let mut tasks = Vec::with_capacity(k);
    for block in 0..k {
        let items: Vec<usize> = (block * per_block..(block + 1) * per_block).collect();
        let (mut sx, mut sy, mut qx, mut qy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (label, &item) in items.iter().enumerate() {
            for view in 0..m {
                let scale = if cfg.aug_scaling { rng.random_range(0.8..=1.2) } else { 1.0 };
                let x = pool[item].iter().map(|&v| {
                    let e = if cfg.aug_sigma > 0.0 { aug.sample(rng) } else { 0.0 };
                    v * scale + e
                });
                if view < n_support {
                    sx.extend(x);
                    sy.push(label);
                } else {
                    qx.extend(x);
                    qy.push(label);
                }
            }
        }
        tasks.push(Task {
            support: Split::new(Tensor::matrix(sy.len(), dim, sx)?, Targets::Classes(sy))?,
            query: Split::new(Tensor::matrix(qy.len(), dim, qx)?, Targets::Classes(qy))?,
            kind: LossKind::Classification,
            n_way: Some(per_block),
            meta: TaskMeta::SelfSupervised { block, items },
        });
    }
    Ok(tasks)
}

/// Unlabelled pool of `pool_size` Gaussian vectors scaled by `separation`.
pub fn gen_pool<R: Rng + ?Sized>(cfg: &TaskGenConfig, rng: &mut R) -> Vec<Vec<f64>> {
    (0..cfg.pool_size)
        .map(|_| {
            (0..cfg.input_dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * cfg.separation
                })
                .collect()
        })
        .collect()
}

pub fn gen_task<R: Rng + ?Sized>(cfg: &TaskGenConfig, rng: &mut R) -> Result<Task> {
    match cfg.family {
        TaskFamily::Sinusoid => gen_sinusoid_task(cfg, rng),
        TaskFamily::Quadratic => gen_quadratic_task(cfg, rng),
        TaskFamily::Clusters => gen_cluster_task(cfg, rng),
        TaskFamily::SelfSupervised => {
            let pool = gen_pool(cfg, rng);
            let mut tasks = build_ssl_batch(&pool, cfg, rng)?;
            let pick = rng.random_range(0..tasks.len());
            Ok(tasks.swap_remove(pick))
        }
    }
}

/// Stream domains keep training, evaluation and dump tasks apart.
pub mod domain {
    pub const TRAIN: u64 = 1;
    pub const EVAL: u64 = 2;
    pub const DUMP: u64 = 3;
}

/// `count` tasks for one iteration, task `i` drawn from its own stream.
pub fn sample_batch(cfg: &TaskGenConfig, domain: u64, iteration: u64, count: usize) -> Result<Vec<Task>> {
    crate::par::map_indexed(count, |i| gen_task(cfg, &mut task_rng(cfg.seed, domain, iteration, i as u64)))
        .into_iter()
        .collect()
}

#[derive(Serialize)]
struct DumpDoc<'a> {
    version: u32,
    config: &'a TaskGenConfig,
    tasks: &'a [Task],
}

/// Writes a batch as one JSON document (config echoed alongside the tasks).
pub fn write_task_dump(path: &std::path::Path, cfg: &TaskGenConfig, tasks: &[Task]) -> Result<()> {
    let doc = DumpDoc { version: 1, config: cfg, tasks };
    crate::io::write_atomic(path, serde_json::to_string_pretty(&doc)?.as_bytes())
}
