//! BIC-style model evidence and posteriors over candidate models.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nn::Ownership;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateModel {
    pub label: String,
    pub loglik: f64,
    /// Free-parameter count.
    pub k: usize,
}

/// `loglik − (K/2)·ln N`.
pub fn log_evidence(loglik: f64, k: usize, n: f64) -> Result<f64> {
    if !(n >= 1.0 && n.is_finite()) {
        return Err(Error::precondition("sample count must be >= 1"));
    }
    Ok(loglik - 0.5 * k as f64 * n.ln())
}

/// Softmax over log-evidences.
pub fn model_posterior(evidences: &[f64]) -> Result<Vec<f64>> {
    if evidences.is_empty() {
        return Err(Error::precondition("posterior needs at least one model"));
    }
    if evidences.iter().any(|e| !e.is_finite()) {
        return Err(Error::domain("log-evidence must be finite"));
    }
    let max = evidences.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = evidences.iter().map(|e| (e - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    Ok(exp.into_iter().map(|e| e / z).collect())
}

/// Parameters owned by units whose probability exceeds `threshold`.
pub fn masked_free_parameters(ownership: &Ownership, probs: &[f64], threshold: f64) -> Result<usize> {
    if probs.len() != ownership.unit_count() {
        return Err(Error::shape("probability count does not match unit count"));
    }
    Ok(ownership.owner().iter().filter(|o| matches!(o, Some(u) if probs[*u] > threshold)).count())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub label: String,
    pub k: usize,
    pub evidence: f64,
    pub posterior: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTable {
    pub samples: usize,
    pub rows: Vec<SelectionRow>,
}

impl SelectionTable {
    pub fn build(candidates: &[CandidateModel], samples: usize) -> Result<Self> {
        if candidates.len() < 2 {
            return Err(Error::precondition("selection needs at least two candidates"));
        }
        if candidates.iter().any(|c| !c.loglik.is_finite()) {
            return Err(Error::domain("candidate log-likelihood must be finite"));
        }
        let evidences = candidates
            .iter()
            .map(|c| log_evidence(c.loglik, c.k, samples as f64))
            .collect::<Result<Vec<_>>>()?;
        let posterior = model_posterior(&evidences)?;
        let best = argmax(&posterior);
        let rows = candidates
            .iter()
            .zip(evidences.iter().zip(&posterior))
            .enumerate()
            .map(|(i, (c, (&evidence, &posterior)))| SelectionRow {
                label: c.label.clone(),
                k: c.k,
                evidence,
                posterior,
                selected: i == best,
            })
            .collect();
        Ok(Self { samples, rows })
    }

    pub fn selected(&self) -> &SelectionRow {
        self.rows.iter().find(|r| r.selected).expect("table has a selected row")
    }

    /// Aligned plain-text rendering; the chosen row carries a `*`.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(5);
        let mut out = format!("  {:<width$}  {:>6}  {:>14}  {:>10}\n", "label", "K", "evidence", "posterior");
        for r in &self.rows {
            let mark = if r.selected { '*' } else { ' ' };
            out.push_str(&format!(
                "{mark} {:<width$}  {:>6}  {:>14.4}  {:>10.6}\n",
                r.label, r.k, r.evidence, r.posterior
            ));
        }
        out
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Gaussian log-likelihood of least squares on the first `k` columns of `x`
/// at the maximum-likelihood noise variance.
pub fn nested_least_squares_loglik(x: &DMatrix<f64>, y: &DVector<f64>, k: usize) -> Result<f64> {
    let n = x.nrows();
    if k > x.ncols() || n <= k {
        return Err(Error::precondition("need more samples than regressors"));
    }
    let rss = if k == 0 {
        y.norm_squared()
    } else {
        let xk = x.columns(0, k).into_owned();
        let beta = xk
            .clone()
            .svd(true, true)
            .solve(y, 1e-12)
            .map_err(|e| Error::domain(format!("least squares failed: {e}")))?;
        (y - xk * beta).norm_squared()
    };
    let var = (rss / n as f64).max(f64::MIN_POSITIVE);
    Ok(-0.5 * n as f64 * ((2.0 * std::f64::consts::PI * var).ln() + 1.0))
}

/// Draws `n` samples from `y = x·β + ε` where only the first `support`
/// coefficients of `β` are nonzero, fits nested candidates with the given
/// regressor counts, and returns the candidate table.
pub fn linear_gaussian_candidates<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    support: usize,
    ks: &[usize],
) -> Result<Vec<CandidateModel>> {
    let dim = ks.iter().copied().max().unwrap_or(0).max(support);
    let x = DMatrix::from_fn(n, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let beta = DVector::from_fn(dim, |i, _| if i < support { 1.0 } else { 0.0 });
    let noise = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = &x * beta + noise;
    ks.iter()
        .map(|&k| {
            Ok(CandidateModel { label: format!("k{k}"), loglik: nested_least_squares_loglik(&x, &y, k)?, k })
        })
        .collect()
}
