//! Structure mask, Hebbian importance tracker and the three structure
//! measurements (frugality, plasticity, sensitivity) combined into one
//! weighted objective over the mask logits.
//!
//! Everything here treats the sensitivity scores, the Hebbian activation
//! probabilities and the other tasks' masks as constants: the objective is a
//! function of one task's mask logits only, and [`StructureProblem::logit_grad`]
//! differentiates exactly that function.

use serde::{Deserialize, Serialize};

use crate::nn::{sigmoid, Granularity, Mask, Network, Ownership, Split};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureMask {
    pub logits: Vec<f64>,
    pub threshold: f64,
    pub granularity: Granularity,
}

impl StructureMask {
    pub fn new(units: usize, init_logit: f64, threshold: f64, granularity: Granularity) -> Self {
        Self { logits: vec![init_logit; units], threshold, granularity }
    }

    pub fn probs(&self) -> Vec<f64> {
        mask_probs(&self.logits)
    }

    pub fn activation_set(&self) -> Vec<bool> {
        activation_set(&self.probs(), self.threshold)
    }

    /// Fraction of units in the activation set.
    pub fn density(&self) -> f64 {
        density(&self.activation_set())
    }
}

pub fn mask_probs(logits: &[f64]) -> Vec<f64> {
    logits.iter().map(|&l| sigmoid(l)).collect()
}

/// Units whose probability strictly exceeds `threshold`.
pub fn activation_set(probs: &[f64], threshold: f64) -> Vec<bool> {
    probs.iter().map(|&p| p > threshold).collect()
}

pub fn density(active: &[bool]) -> f64 {
    if active.is_empty() {
        return 1.0;
    }
    active.iter().filter(|&&a| a).count() as f64 / active.len() as f64
}

/// `max{C, γ · d · ln(N / d)}` for `d` masked parameters and `N` samples.
pub fn frugality_bound(d: usize, samples: usize, c: f64, gamma: f64) -> f64 {
    let d = d.max(1) as f64;
    let n = samples.max(1) as f64;
    c.max(gamma * d * (n / d).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Frugality {
    /// `Σ_p prob(owner(p)) · |θ_p|`
    pub l1: f64,
    /// `μ · max(0, l1 - bound)`
    pub penalty: f64,
}

impl Frugality {
    pub fn total(&self) -> f64 {
        self.l1 + self.penalty
    }
}

/// Masked l1 norm plus hinge penalty above `bound`. Parameters without an
/// owning unit are not masked and do not count.
pub fn frugality_loss(weights: &[f64], probs: &[f64], ownership: &Ownership, bound: f64, mu: f64) -> Result<Frugality> {
    if weights.len() != ownership.owner().len() || probs.len() != ownership.unit_count() {
        return Err(Error::shape("weights, probabilities and ownership disagree"));
    }
    let l1: f64 = weights
        .iter()
        .zip(ownership.owner())
        .filter_map(|(w, o)| o.map(|u| probs[u] * w.abs()))
        .sum();
    Ok(Frugality { l1, penalty: mu * (l1 - bound).max(0.0) })
}

/// Running per-unit importance, turned into activation probabilities with a
/// temperature softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HebbianTracker {
    pub importance: Vec<f64>,
    pub decay: f64,
    pub temperature: f64,
}

impl HebbianTracker {
    pub fn new(units: usize, decay: f64, temperature: f64) -> Self {
        Self { importance: vec![0.0; units], decay, temperature }
    }

    /// `p_ω = exp(β L_ω) / Σ_k exp(β L_k)`, computed with the max subtracted.
    pub fn probs(&self) -> Vec<f64> {
        softmax_scaled(&self.importance, self.temperature)
    }

    /// EMA step: active units move toward their new impact, inactive ones
    /// decay toward zero at the same rate.
    pub fn update(&mut self, active: &[bool], impacts: &[f64]) -> Result<()> {
        if active.len() != self.importance.len() || impacts.len() != self.importance.len() {
            return Err(Error::shape("tracker update has the wrong length"));
        }
        let rho = self.decay;
        for ((l, &on), &impact) in self.importance.iter_mut().zip(active).zip(impacts) {
            let target = if on { impact.max(0.0) } else { 0.0 };
            *l = (1.0 - rho) * *l + rho * target;
        }
        Ok(())
    }
}

pub fn softmax_scaled(values: &[f64], scale: f64) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let max = values.iter().map(|v| v * scale).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v * scale - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Plasticity {
    /// `Σ_j Σ_ω probs_i[ω] probs_j[ω] p_ω`
    pub soft: f64,
    /// `Σ_j Σ_ω 1[ω active in both] p_ω`
    pub hard: f64,
}

pub fn plasticity_loss(probs_i: &[f64], others: &[&[f64]], hebbian: &[f64], threshold: f64) -> Result<Plasticity> {
    let n = probs_i.len();
    if hebbian.len() != n || others.iter().any(|o| o.len() != n) {
        return Err(Error::shape("plasticity inputs have different lengths"));
    }
    let mut out = Plasticity::default();
    for other in others {
        for w in 0..n {
            out.soft += probs_i[w] * other[w] * hebbian[w];
            if probs_i[w] > threshold && other[w] > threshold {
                out.hard += hebbian[w];
            }
        }
    }
    Ok(out)
}

/// Mean over unordered task pairs of the importance-weighted overlap of their
/// activation sets. Zero for fewer than two tasks.
pub fn pairwise_hard_overlap(sets: &[Vec<bool>], hebbian: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            total += sets[i]
                .iter()
                .zip(&sets[j])
                .zip(hebbian)
                .filter(|((a, b), _)| **a && **b)
                .map(|(_, p)| p)
                .sum::<f64>();
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

/// Per-unit sum of `|∂L/∂θ_p|` over the parameters the unit owns, with the
/// loss evaluated under `mask`.
pub fn sensitivity_scores(net: &Network, mask: Mask<'_>, split: &Split, ownership: &Ownership) -> Result<Vec<f64>> {
    let (_, grads) = net.loss_and_grads(mask, split)?;
    Ok(scores_from_grads(&grads.weights, ownership))
}

pub fn scores_from_grads(weight_grads: &[f64], ownership: &Ownership) -> Vec<f64> {
    let mut s = vec![0.0; ownership.unit_count()];
    for (g, o) in weight_grads.iter().zip(ownership.owner()) {
        if let Some(u) = o {
            s[*u] += g.abs();
        }
    }
    s
}

/// Normalized log-ratios `-ln((s_ω + ε) / Σ_k (s_k + ε))`, each `>= 0`.
pub fn sensitivity_costs(scores: &[f64], floor: f64) -> Result<Vec<f64>> {
    if scores.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(Error::domain("sensitivity scores must be finite and non-negative"));
    }
    let total: f64 = scores.iter().map(|s| s + floor).sum();
    if !(total > 0.0) {
        return Err(Error::domain("all sensitivity scores are zero and the floor is zero"));
    }
    Ok(scores.iter().map(|s| -((s + floor) / total).ln().min(0.0)).collect())
}

/// `Σ_ω -ln((s_ω + ε) / S') · probs[ω]`
pub fn sensitivity_loss(probs: &[f64], scores: &[f64], floor: f64) -> Result<f64> {
    if probs.len() != scores.len() {
        return Err(Error::shape("probabilities and scores differ in length"));
    }
    let costs = sensitivity_costs(scores, floor)?;
    Ok(costs.iter().zip(probs).map(|(c, p)| c * p).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureWeights {
    pub lambda_fr: f64,
    pub lambda_pl: f64,
    pub lambda_se: f64,
    /// Floor `C` of the frugality bound.
    pub c: f64,
    /// Scale `γ` of the frugality bound.
    pub gamma: f64,
    /// Hinge weight `μ`.
    pub mu: f64,
    /// Sensitivity floor `ε_s`.
    pub eps_s: f64,
}

impl Default for StructureWeights {
    fn default() -> Self {
        Self { lambda_fr: 0.5, lambda_pl: 0.5, lambda_se: 0.5, c: 1.0, gamma: 0.5, mu: 1.0, eps_s: 1e-8 }
    }
}

impl StructureWeights {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [("lambda_fr", self.lambda_fr), ("lambda_pl", self.lambda_pl), ("lambda_se", self.lambda_se), ("mu", self.mu)];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be >= 0")));
            }
        }
        for (name, v) in [("c", self.c), ("gamma", self.gamma), ("eps_s", self.eps_s)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }

    pub fn any_active(&self) -> bool {
        self.lambda_fr > 0.0 || self.lambda_pl > 0.0 || self.lambda_se > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StructureTerms {
    pub l1: f64,
    pub bound: f64,
    /// `max(0, l1 - bound)`
    pub violation: f64,
    pub penalty: f64,
    pub plasticity_soft: f64,
    pub plasticity_hard: f64,
    pub sensitivity: f64,
    pub total: f64,
}

/// One task's structure objective with everything but its mask logits fixed.
#[derive(Debug, Clone)]
pub struct StructureProblem<'a> {
    pub weights: &'a [f64],
    pub ownership: &'a Ownership,
    /// Adapted mask probabilities of the other tasks in the batch.
    pub others: Vec<&'a [f64]>,
    pub hebbian: &'a [f64],
    pub scores: &'a [f64],
    pub bound: f64,
    pub threshold: f64,
}

impl StructureProblem<'_> {
    pub fn evaluate(&self, logits: &[f64], sw: &StructureWeights) -> Result<StructureTerms> {
        self.evaluate_probs(&mask_probs(logits), sw)
    }

    pub fn evaluate_probs(&self, probs: &[f64], sw: &StructureWeights) -> Result<StructureTerms> {
        let probs = probs.to_vec();
        let fr = frugality_loss(self.weights, &probs, self.ownership, self.bound, sw.mu)?;
        let pl = plasticity_loss(&probs, &self.others, self.hebbian, self.threshold)?;
        let se = sensitivity_loss(&probs, self.scores, sw.eps_s)?;
        Ok(StructureTerms {
            l1: fr.l1,
            bound: self.bound,
            violation: (fr.l1 - self.bound).max(0.0),
            penalty: fr.penalty,
            plasticity_soft: pl.soft,
            plasticity_hard: pl.hard,
            sensitivity: se,
            total: sw.lambda_fr * fr.total() + sw.lambda_pl * pl.soft + sw.lambda_se * se,
        })
    }

    /// Exact gradient of `evaluate(..).total` with respect to the logits.
    pub fn logit_grad(&self, logits: &[f64], sw: &StructureWeights) -> Result<Vec<f64>> {
        let units = self.ownership.unit_count();
        if logits.len() != units {
            return Err(Error::shape("logit count does not match unit count"));
        }
        let probs = mask_probs(logits);
        let fr = frugality_loss(self.weights, &probs, self.ownership, self.bound, sw.mu)?;
        let hinge = if fr.l1 > self.bound { sw.mu } else { 0.0 };

        let mut owned_abs = vec![0.0; units];
        for (w, o) in self.weights.iter().zip(self.ownership.owner()) {
            if let Some(u) = o {
                owned_abs[*u] += w.abs();
            }
        }
        let costs = sensitivity_costs(self.scores, sw.eps_s)?;
        let mut grad = Vec::with_capacity(units);
        for u in 0..units {
            let others: f64 = self.others.iter().map(|o| o[u]).sum();
            let dprob = sw.lambda_fr * (1.0 + hinge) * owned_abs[u]
                + sw.lambda_pl * others * self.hebbian[u]
                + sw.lambda_se * costs[u];
            grad.push(dprob * probs[u] * (1.0 - probs[u]));
        }
        Ok(grad)
    }

    /// Central differences of `evaluate(..).total` over every logit.
    pub fn numeric_logit_grad(&self, logits: &[f64], sw: &StructureWeights, step: f64) -> Result<Vec<f64>> {
        let mut probe = logits.to_vec();
        let mut grad = Vec::with_capacity(logits.len());
        for i in 0..logits.len() {
            probe[i] = logits[i] + step;
            let up = self.evaluate(&probe, sw)?.total;
            probe[i] = logits[i] - step;
            let down = self.evaluate(&probe, sw)?.total;
            probe[i] = logits[i];
            grad.push((up - down) / (2.0 * step));
        }
        Ok(grad)
    }
}
