//! Dense feed-forward networks evaluated under a structure mask, with exact
//! reverse-mode gradients for both the weights and the mask logits.
//!
//! Parameters live in one flat vector. Layer `l` stores its weight matrix
//! (`out x in`, row-major) followed by its bias vector. Hidden layers use the
//! configured activation; the output layer is always the identity, with
//! softmax folded into the cross-entropy loss for classification.
//!
//! Two mask granularities exist:
//!
//! - per-unit: one probability per hidden unit, multiplying that unit's
//!   post-activation output before it feeds the next layer;
//! - per-parameter: one probability per parameter, so the network runs on
//!   `probs ⊙ θ`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    #[default]
    PerUnit,
    PerParameter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Regression,
    Classification,
}

/// Supervision for a set of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Targets {
    Values(Tensor),
    Classes(Vec<usize>),
}

impl Targets {
    pub fn kind(&self) -> LossKind {
        match self {
            Targets::Values(_) => LossKind::Regression,
            Targets::Classes(_) => LossKind::Classification,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Targets::Values(t) => t.rows(),
            Targets::Classes(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn concat(&self, other: &Targets) -> Result<Targets> {
        match (self, other) {
            (Targets::Values(a), Targets::Values(b)) => Ok(Targets::Values(a.vstack(b)?)),
            (Targets::Classes(a), Targets::Classes(b)) => {
                Ok(Targets::Classes(a.iter().chain(b).copied().collect()))
            }
            _ => Err(Error::shape("cannot concatenate targets of different kinds")),
        }
    }
}

/// Samples paired with their targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub inputs: Tensor,
    pub targets: Targets,
}

impl Split {
    pub fn new(inputs: Tensor, targets: Targets) -> Result<Self> {
        if inputs.rows() != targets.len() {
            return Err(Error::shape(format!(
                "{} input rows but {} targets",
                inputs.rows(),
                targets.len()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn concat(&self, other: &Split) -> Result<Split> {
        Split::new(self.inputs.vstack(&other.inputs)?, self.targets.concat(&other.targets)?)
    }
}

/// Mask probabilities applied during evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Mask<'a> {
    Dense,
    Units(&'a [f64]),
    Parameters(&'a [f64]),
}

impl<'a> Mask<'a> {
    pub fn new(granularity: Granularity, probs: &'a [f64]) -> Self {
        match granularity {
            Granularity::PerUnit => Mask::Units(probs),
            Granularity::PerParameter => Mask::Parameters(probs),
        }
    }

    fn probs(&self) -> &'a [f64] {
        match *self {
            Mask::Dense => &[],
            Mask::Units(p) | Mask::Parameters(p) => p,
        }
    }
}

/// Gradients of a scalar loss. `mask_logits` is empty for a dense evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub weights: Vec<f64>,
    pub mask_logits: Vec<f64>,
}

impl GradBundle {
    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.mask_logits).all(|g| g.is_finite())
    }
}

/// Maps every parameter to the maskable unit that owns it.
///
/// Under per-unit masking a hidden unit owns its incoming weights and its
/// bias; output-layer parameters have no owner. Under per-parameter masking
/// every parameter is its own unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Ownership {
    owner: Vec<Option<usize>>,
    units: usize,
}

impl Ownership {
    pub fn owner(&self) -> &[Option<usize>] {
        &self.owner
    }

    pub fn unit_count(&self) -> usize {
        self.units
    }

    /// Number of parameters that belong to some unit.
    pub fn owned_count(&self) -> usize {
        self.owner.iter().filter(|o| o.is_some()).count()
    }

    /// Parameter count per unit.
    pub fn unit_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.units];
        for u in self.owner.iter().flatten() {
            sizes[*u] += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    dims: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
}

impl Network {
    /// Network with all parameters zero. `dims` lists the layer widths from
    /// input to output.
    pub fn zeros(dims: &[usize], hidden: Activation) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::shape(format!("invalid layer widths {dims:?}")));
        }
        let layers = dims.len() - 1;
        let mut activations = vec![hidden; layers];
        activations[layers - 1] = Activation::Identity;
        let count = dims.windows(2).map(|w| w[1] * (w[0] + 1)).sum();
        Ok(Self { dims: dims.to_vec(), activations, params: vec![0.0; count] })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims, hidden)?;
        for l in 0..net.layer_count() {
            let (fan_in, fan_out) = (net.dims[l], net.dims[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = net.weight_range(l);
            for v in &mut net.params[w] {
                *v = rng.random_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    /// Builds a network from explicit `(weights, bias)` pairs; weights are
    /// row-major `out x in`.
    pub fn from_layers(dims: &[usize], hidden: Activation, layers: &[(Vec<f64>, Vec<f64>)]) -> Result<Self> {
        let mut net = Self::zeros(dims, hidden)?;
        if layers.len() != net.layer_count() {
            return Err(Error::shape("layer count does not match widths"));
        }
        for (l, (w, b)) in layers.iter().enumerate() {
            let wr = net.weight_range(l);
            let br = net.bias_range(l);
            if w.len() != wr.len() || b.len() != br.len() {
                return Err(Error::shape(format!("layer {l} has wrong parameter count")));
            }
            net.params[wr].copy_from_slice(w);
            net.params[br].copy_from_slice(b);
        }
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn layer_count(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn hidden_units(&self) -> usize {
        self.dims[1..self.dims.len() - 1].iter().sum()
    }

    pub fn mask_len(&self, granularity: Granularity) -> usize {
        match granularity {
            Granularity::PerUnit => self.hidden_units(),
            Granularity::PerParameter => self.param_count(),
        }
    }

    fn layer_offset(&self, l: usize) -> usize {
        self.dims.windows(2).take(l).map(|w| w[1] * (w[0] + 1)).sum()
    }

    pub fn weight_range(&self, l: usize) -> std::ops::Range<usize> {
        let start = self.layer_offset(l);
        start..start + self.dims[l] * self.dims[l + 1]
    }

    pub fn bias_range(&self, l: usize) -> std::ops::Range<usize> {
        let start = self.weight_range(l).end;
        start..start + self.dims[l + 1]
    }

    pub fn ownership(&self, granularity: Granularity) -> Ownership {
        match granularity {
            Granularity::PerParameter => Ownership {
                owner: (0..self.param_count()).map(Some).collect(),
                units: self.param_count(),
            },
            Granularity::PerUnit => {
                let mut owner = vec![None; self.param_count()];
                let mut unit_base = 0;
                for l in 0..self.layer_count() - 1 {
                    let (fan_in, out) = (self.dims[l], self.dims[l + 1]);
                    let w = self.weight_range(l);
                    let b = self.bias_range(l);
                    for u in 0..out {
                        for i in 0..fan_in {
                            owner[w.start + u * fan_in + i] = Some(unit_base + u);
                        }
                        owner[b.start + u] = Some(unit_base + u);
                    }
                    unit_base += out;
                }
                Ownership { owner, units: self.hidden_units() }
            }
        }
    }

    fn check_mask(&self, mask: &Mask<'_>) -> Result<()> {
        let (expected, probs) = match mask {
            Mask::Dense => return Ok(()),
            Mask::Units(p) => (self.hidden_units(), *p),
            Mask::Parameters(p) => (self.param_count(), *p),
        };
        if probs.len() != expected {
            return Err(Error::shape(format!(
                "mask has {} entries, network needs {expected}",
                probs.len()
            )));
        }
        Ok(())
    }

    fn check_inputs(&self, inputs: &Tensor) -> Result<()> {
        if inputs.shape().len() != 2 || inputs.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "inputs of shape {:?} do not match input width {}",
                inputs.shape(),
                self.input_dim()
            )));
        }
        if !inputs.is_finite() {
            return Err(Error::domain("non-finite input"));
        }
        Ok(())
    }

    fn effective_params<'a>(&'a self, mask: &Mask<'_>) -> std::borrow::Cow<'a, [f64]> {
        match mask {
            Mask::Parameters(p) => self.params.iter().zip(p.iter()).map(|(w, p)| w * p).collect(),
            _ => std::borrow::Cow::Borrowed(&self.params),
        }
    }

    /// Predictions for every input row, shape `[rows, output_dim]`.
    pub fn forward(&self, mask: Mask<'_>, inputs: &Tensor) -> Result<Tensor> {
        self.check_mask(&mask)?;
        self.check_inputs(inputs)?;
        let eff = self.effective_params(&mask);
        let unit_probs = match mask {
            Mask::Units(p) => Some(p),
            _ => None,
        };
        let mut cache = Cache::new(&self.dims);
        let mut out = Vec::with_capacity(inputs.rows() * self.output_dim());
        for r in 0..inputs.rows() {
            self.forward_sample(&eff, unit_probs, inputs.row(r), &mut cache);
            out.extend_from_slice(cache.output());
        }
        Tensor::matrix(inputs.rows(), self.output_dim(), out)
    }

    fn forward_sample(&self, eff: &[f64], unit_probs: Option<&[f64]>, x: &[f64], cache: &mut Cache) {
        cache.h[0].copy_from_slice(x);
        let last = self.layer_count() - 1;
        let mut unit_base = 0;
        for l in 0..self.layer_count() {
            let (fan_in, out) = (self.dims[l], self.dims[l + 1]);
            let w = &eff[self.weight_range(l)];
            let b = &eff[self.bias_range(l)];
            let act = self.activations[l];
            let (lower, upper) = cache.h.split_at_mut(l + 1);
            let h_in = &lower[l];
            let h_out = &mut upper[0];
            let z = &mut cache.z[l];
            let a = &mut cache.a[l];
            for u in 0..out {
                let row = &w[u * fan_in..(u + 1) * fan_in];
                let s: f64 = row.iter().zip(h_in.iter()).map(|(w, h)| w * h).sum::<f64>() + b[u];
                z[u] = s;
                a[u] = act.apply(s);
                h_out[u] = match unit_probs {
                    Some(p) if l < last => a[u] * p[unit_base + u],
                    _ => a[u],
                };
            }
            if l < last {
                unit_base += out;
            }
        }
    }

    /// Mean loss over the split and its exact gradients.
    ///
    /// Regression uses the mean squared error over all target entries;
    /// classification uses softmax cross-entropy averaged over samples. Mask
    /// gradients are taken with respect to the logits behind `mask`, i.e. the
    /// probability gradient is chained through the logistic.
    pub fn loss_and_grads(&self, mask: Mask<'_>, split: &Split) -> Result<(f64, GradBundle)> {
        self.evaluate_split(mask, split, true).map(|(l, g)| (l, g.expect("grads requested")))
    }

    pub fn loss(&self, mask: Mask<'_>, split: &Split) -> Result<f64> {
        self.evaluate_split(mask, split, false).map(|(l, _)| l)
    }

    fn evaluate_split(&self, mask: Mask<'_>, split: &Split, want_grads: bool) -> Result<(f64, Option<GradBundle>)> {
        self.check_mask(&mask)?;
        self.check_inputs(&split.inputs)?;
        let n = split.len();
        if n == 0 {
            return Err(Error::precondition("empty sample set"));
        }
        if split.targets.len() != n {
            return Err(Error::shape("targets do not match inputs"));
        }
        let out_dim = self.output_dim();
        match &split.targets {
            Targets::Values(t) => {
                if t.cols() != out_dim {
                    return Err(Error::shape(format!(
                        "regression targets have {} columns, network outputs {out_dim}",
                        t.cols()
                    )));
                }
            }
            Targets::Classes(c) => {
                if let Some(bad) = c.iter().find(|&&c| c >= out_dim) {
                    return Err(Error::domain(format!("class index {bad} out of range 0..{out_dim}")));
                }
            }
        }

        let eff = self.effective_params(&mask);
        let unit_probs = match mask {
            Mask::Units(p) => Some(p),
            _ => None,
        };
        let mut cache = Cache::new(&self.dims);
        let mut grad_eff = if want_grads { vec![0.0; self.param_count()] } else { Vec::new() };
        let mut grad_units = if want_grads && unit_probs.is_some() {
            vec![0.0; self.hidden_units()]
        } else {
            Vec::new()
        };
        let mut delta = vec![0.0; out_dim];
        let mut total = 0.0;

        for r in 0..n {
            self.forward_sample(&eff, unit_probs, split.inputs.row(r), &mut cache);
            let y = cache.output();
            match &split.targets {
                Targets::Values(t) => {
                    let scale = 1.0 / (n * out_dim) as f64;
                    for (k, (yk, tk)) in y.iter().zip(t.row(r)).enumerate() {
                        let e = yk - tk;
                        total += e * e * scale;
                        delta[k] = 2.0 * e * scale;
                    }
                }
                Targets::Classes(c) => {
                    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = y.iter().map(|v| (v - max).exp()).sum();
                    let lse = max + sum.ln();
                    total += (lse - y[c[r]]) / n as f64;
                    for k in 0..out_dim {
                        let p = (y[k] - lse).exp();
                        delta[k] = (p - if k == c[r] { 1.0 } else { 0.0 }) / n as f64;
                    }
                }
            }
            if want_grads {
                self.backward_sample(&eff, unit_probs, &mut cache, &delta, &mut grad_eff, &mut grad_units);
            }
        }

        if !want_grads {
            return Ok((total, None));
        }
        let probs = mask.probs();
        let grads = match mask {
            Mask::Dense => GradBundle { weights: grad_eff, mask_logits: Vec::new() },
            Mask::Units(_) => {
                let mask_logits = grad_units.iter().zip(probs).map(|(g, p)| g * p * (1.0 - p)).collect();
                GradBundle { weights: grad_eff, mask_logits }
            }
            Mask::Parameters(_) => {
                let weights = grad_eff.iter().zip(probs).map(|(g, p)| g * p).collect();
                let mask_logits = grad_eff
                    .iter()
                    .zip(&self.params)
                    .zip(probs)
                    .map(|((g, w), p)| g * w * p * (1.0 - p))
                    .collect();
                GradBundle { weights, mask_logits }
            }
        };
        Ok((total, Some(grads)))
    }

    fn backward_sample(
        &self,
        eff: &[f64],
        unit_probs: Option<&[f64]>,
        cache: &mut Cache,
        delta_out: &[f64],
        grad_eff: &mut [f64],
        grad_units: &mut [f64],
    ) {
        let last = self.layer_count() - 1;
        // `dh` holds dL/d(layer output) for the current layer.
        cache.dh[last + 1].copy_from_slice(delta_out);
        let mut unit_end = self.hidden_units();
        for l in (0..self.layer_count()).rev() {
            let (fan_in, out) = (self.dims[l], self.dims[l + 1]);
            let act = self.activations[l];
            let unit_base = if l < last { unit_end - out } else { unit_end };
            let wr = self.weight_range(l);
            let br = self.bias_range(l);
            let (dh_lower, dh_upper) = cache.dh.split_at_mut(l + 1);
            let dh_out = &dh_upper[0];
            let dh_in = &mut dh_lower[l];
            dh_in.iter_mut().for_each(|v| *v = 0.0);
            for u in 0..out {
                let mut da = dh_out[u];
                if l < last {
                    if let Some(p) = unit_probs {
                        grad_units[unit_base + u] += da * cache.a[l][u];
                        da *= p[unit_base + u];
                    }
                }
                let dz = da * act.derivative(cache.z[l][u], cache.a[l][u]);
                if dz == 0.0 {
                    continue;
                }
                grad_eff[br.start + u] += dz;
                let row = wr.start + u * fan_in;
                for i in 0..fan_in {
                    grad_eff[row + i] += dz * cache.h[l][i];
                    dh_in[i] += dz * eff[row + i];
                }
            }
            if l < last {
                unit_end = unit_base;
            }
        }
    }
}

struct Cache {
    h: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
    dh: Vec<Vec<f64>>,
}

impl Cache {
    fn new(dims: &[usize]) -> Self {
        Self {
            h: dims.iter().map(|&d| vec![0.0; d]).collect(),
            z: dims[1..].iter().map(|&d| vec![0.0; d]).collect(),
            a: dims[1..].iter().map(|&d| vec![0.0; d]).collect(),
            dh: dims.iter().map(|&d| vec![0.0; d]).collect(),
        }
    }

    fn output(&self) -> &[f64] {
        &self.h[self.h.len() - 1]
    }
}

/// Elementwise logistic.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Central-difference estimate of the gradients [`Network::loss_and_grads`]
/// returns. Mask logits are perturbed only when given.
pub fn numeric_grads(
    net: &Network,
    mask_logits: Option<(Granularity, &[f64])>,
    split: &Split,
    step: f64,
) -> Result<GradBundle> {
    if !(step > 0.0 && step <= 1e-2) {
        return Err(Error::precondition(format!("step {step} outside (0, 1e-2]")));
    }
    if net.param_count() > 10_000 {
        return Err(Error::precondition("finite-difference check limited to 10^4 parameters"));
    }
    let eval = |net: &Network, logits: Option<&[f64]>| -> Result<f64> {
        match (mask_logits, logits) {
            (Some((g, _)), Some(l)) => net.loss(Mask::new(g, &probs_of(l)), split),
            _ => net.loss(Mask::Dense, split),
        }
    };
    let base_logits = mask_logits.map(|(_, l)| l.to_vec());

    let mut weights = Vec::with_capacity(net.param_count());
    let mut probe = net.clone();
    for i in 0..net.param_count() {
        let orig = net.params[i];
        probe.params[i] = orig + step;
        let up = eval(&probe, base_logits.as_deref())?;
        probe.params[i] = orig - step;
        let down = eval(&probe, base_logits.as_deref())?;
        probe.params[i] = orig;
        weights.push((up - down) / (2.0 * step));
    }
    let mut mask = Vec::new();
    if let Some(mut logits) = base_logits {
        for i in 0..logits.len() {
            let orig = logits[i];
            logits[i] = orig + step;
            let up = eval(net, Some(&logits))?;
            logits[i] = orig - step;
            let down = eval(net, Some(&logits))?;
            logits[i] = orig;
            mask.push((up - down) / (2.0 * step));
        }
    }
    Ok(GradBundle { weights, mask_logits: mask })
}

fn probs_of(logits: &[f64]) -> Vec<f64> {
    logits.iter().map(|&l| sigmoid(l)).collect()
}

/// Central-difference check of [`Network::loss_and_grads`].
///
/// Perturbs every parameter and (when `mask_logits` is given) every mask
/// logit, and returns the largest
/// `|analytic - numeric| / (|analytic| + |numeric| + 1e-12)`.
pub fn finite_diff_check(
    net: &Network,
    mask_logits: Option<(Granularity, &[f64])>,
    split: &Split,
    step: f64,
) -> Result<f64> {
    let numeric = numeric_grads(net, mask_logits, split, step)?;
    let (_, analytic) = match mask_logits {
        Some((g, l)) => net.loss_and_grads(Mask::new(g, &probs_of(l)), split)?,
        None => net.loss_and_grads(Mask::Dense, split)?,
    };
    Ok(max_relative_error(&analytic.weights, &numeric.weights)
        .max(max_relative_error(&analytic.mask_logits, &numeric.mask_logits)))
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic.iter().zip(numeric).map(|(a, n)| relative_error(*a, *n)).fold(0.0, f64::max)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}
