//! Epistemic ensemble reward model.
//!
//! `K` independent ReLU perceptrons score a candidate's feature vector. The
//! ensemble mean is the reward estimate and the population standard
//! deviation of the head outputs is its epistemic uncertainty. Heads are
//! trained with the Bradley-Terry negative log-likelihood plus a reward
//! centering penalty and an anchor penalty towards each head's own frozen
//! initialisation. Gradients are closed-form backprop.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand::seq::SliceRandom;
use rand::seq::index;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{domain, stream};
use crate::types::{PreferenceTriplet, RewardEstimate, sigmoid_unchecked};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnnConfig {
    pub num_heads: usize,
    pub layers_per_head: usize,
    pub hidden_size: usize,
    pub beta: f64,
    pub learning_rate: f64,
    pub train_steps: usize,
    /// Pairs per optimizer step.
    pub minibatch_size: usize,
    pub gamma: f64,
    pub zeta0: f64,
    pub zeta_decay: f64,
    pub rho: usize,
    pub feature_dim: usize,
}

impl Default for EnnConfig {
    fn default() -> Self {
        Self {
            num_heads: 20,
            layers_per_head: 2,
            hidden_size: 128,
            beta: 1.0,
            learning_rate: 5e-5,
            train_steps: 100,
            minibatch_size: 64,
            gamma: 0.01,
            zeta0: 1.0,
            zeta_decay: 0.999,
            rho: 1000,
            feature_dim: 16,
        }
    }
}

impl EnnConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                out.push(msg);
            }
        };
        check(self.num_heads >= 2, format!("enn.num_heads: must be >= 2, got {}", self.num_heads));
        check(self.layers_per_head >= 1, "enn.layers_per_head: must be >= 1".into());
        check(self.hidden_size >= 1, "enn.hidden_size: must be >= 1".into());
        check(
            self.beta > 0.0 && self.beta.is_finite(),
            format!("enn.beta: must be > 0, got {}", self.beta),
        );
        check(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            format!("enn.learning_rate: must be > 0, got {}", self.learning_rate),
        );
        check(self.minibatch_size >= 1, "enn.minibatch_size: must be >= 1".into());
        check(
            self.gamma >= 0.0 && self.gamma.is_finite(),
            format!("enn.gamma: must be >= 0, got {}", self.gamma),
        );
        check(
            self.zeta0 >= 0.0 && self.zeta0.is_finite(),
            format!("enn.zeta0: must be >= 0, got {}", self.zeta0),
        );
        check(
            self.zeta_decay > 0.0 && self.zeta_decay <= 1.0,
            format!("enn.zeta_decay: must be in (0, 1], got {}", self.zeta_decay),
        );
        check(self.rho >= 1, "enn.rho: must be >= 1".into());
        check(self.feature_dim >= 1, "enn.feature_dim: must be >= 1".into());
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() { Ok(()) } else { Err(Error::Config(p.join("; "))) }
    }

    /// Anchor weight used by the `t`-th training call.
    pub fn zeta_at(&self, t: usize) -> f64 {
        self.zeta0 * self.zeta_decay.powi(t as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `fan_in x fan_out`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self {
            weights: Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..=limit)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// One ensemble member: `d -> hidden (-> hidden)* -> 1`, ReLU between layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub layers: Vec<Layer>,
}

impl Head {
    fn shape(config: &EnnConfig) -> Vec<(usize, usize)> {
        let mut dims = vec![config.feature_dim];
        dims.extend(std::iter::repeat_n(config.hidden_size, config.layers_per_head));
        dims.push(1);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.weights.nrows(), l.weights.ncols()))
                .collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    /// Head output for each row of `x`.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            a = a.dot(&layer.weights) + &layer.bias;
            if i < last {
                a.mapv_inplace(|v| v.max(0.0));
            }
        }
        a.column(0).to_owned()
    }

    /// Forward pass keeping every layer's input for backprop.
    fn forward_cached(&self, x: ArrayView2<'_, f64>) -> (Vec<Array2<f64>>, Array1<f64>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights) + &layer.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(a);
            a = z;
        }
        (inputs, a.column(0).to_owned())
    }

    /// Parameter gradient given `d loss / d output` per row.
    fn backward(&self, inputs: &[Array2<f64>], grad_out: ArrayView1<'_, f64>) -> Head {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out.to_owned().insert_axis(Axis(1));
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &inputs[i];
            let gw = input.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut back = delta.dot(&layer.weights.t());
                // inputs[i] is the ReLU output of layer i-1.
                Zip::from(&mut back).and(input).for_each(|g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
                delta = back;
            }
            grads.push(Layer { weights: gw, bias: gb });
        }
        grads.reverse();
        Head { layers: grads }
    }

    fn sq_distance(&self, other: &Head) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| {
                let w: f64 = Zip::from(&a.weights)
                    .and(&b.weights)
                    .fold(0.0, |acc, x, y| acc + (x - y).powi(2));
                let c: f64 = Zip::from(&a.bias)
                    .and(&b.bias)
                    .fold(0.0, |acc, x, y| acc + (x - y).powi(2));
                w + c
            })
            .sum()
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnnModel {
    config: EnnConfig,
    heads: Vec<Head>,
    anchors: Vec<Head>,
    iteration_count: usize,
}

pub fn enn_init(config: EnnConfig, seed: u64) -> Result<EnnModel> {
    config.validate()?;
    let shape = Head::shape(&config);
    let heads: Vec<Head> = (0..config.num_heads)
        .map(|k| {
            let mut rng = stream(seed, domain::ENN_INIT, &[k as u64]);
            Head {
                layers: shape
                    .iter()
                    .map(|&(i, o)| Layer::glorot(i, o, &mut rng))
                    .collect(),
            }
        })
        .collect();
    Ok(EnnModel {
        anchors: heads.clone(),
        heads,
        config,
        iteration_count: 0,
    })
}

impl EnnModel {
    /// Assemble a model from explicit heads. Anchors are copies of `heads`.
    pub fn from_heads(config: EnnConfig, heads: Vec<Head>) -> Result<Self> {
        if heads.is_empty() {
            return Err(Error::Config("ensemble needs at least one head".into()));
        }
        let shape = Head::shape(&config);
        for (k, h) in heads.iter().enumerate() {
            let dims: Vec<(usize, usize)> = h.layers.iter().map(|l| l.weights.dim()).collect();
            let bias_ok = h.layers.iter().all(|l| l.bias.len() == l.weights.ncols());
            if dims != shape || !bias_ok {
                return Err(Error::Config(format!("head {k} does not match the configured shape")));
            }
        }
        let config = EnnConfig { num_heads: heads.len(), ..config };
        Ok(Self {
            anchors: heads.clone(),
            heads,
            config,
            iteration_count: 0,
        })
    }

    pub fn config(&self) -> &EnnConfig {
        &self.config
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    pub fn anchors(&self) -> &[Head] {
        &self.anchors
    }

    pub fn iteration_count(&self) -> usize {
        self.iteration_count
    }

    /// Anchor weight the next training call will use.
    pub fn current_zeta(&self) -> f64 {
        self.config.zeta_at(self.iteration_count)
    }

    /// Rescale the uncertainty bounds without touching the heads.
    pub fn set_beta(&mut self, beta: f64) -> Result<()> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("enn.beta: must be > 0, got {beta}")));
        }
        self.config.beta = beta;
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.heads.iter().map(Head::num_params).sum()
    }

    /// Flat parameter vector, heads in order, each layer's weights
    /// (row-major) followed by its bias.
    pub fn params(&self) -> Vec<f64> {
        self.heads.iter().flat_map(|h| h.params().copied()).collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension { expected: self.num_params(), got: flat.len() });
        }
        for (p, v) in self.heads.iter_mut().flat_map(|h| h.params_mut()).zip(flat) {
            *p = *v;
        }
        Ok(())
    }

    /// SHA-256 over the anchor parameters' bit patterns.
    pub fn anchor_digest(&self) -> String {
        let mut h = Sha256::new();
        for p in self.anchors.iter().flat_map(|a| a.params()) {
            h.update(p.to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Anchor penalty `sum_k ||phi_k - anchor_k||^2` (unweighted).
    pub fn anchor_distance(&self) -> f64 {
        self.heads
            .iter()
            .zip(&self.anchors)
            .map(|(h, a)| h.sq_distance(a))
            .sum()
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.config.feature_dim {
            return Err(Error::Dimension { expected: self.config.feature_dim, got });
        }
        Ok(())
    }

    /// Every head's output for each row: `K x n`.
    pub fn head_outputs(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_dim(x.ncols())?;
        let mut out = Array2::zeros((self.heads.len(), x.nrows()));
        for (k, head) in self.heads.iter().enumerate() {
            out.row_mut(k).assign(&head.forward(x));
        }
        Ok(out)
    }

    /// Reward estimates for each row of `x`.
    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Result<Vec<RewardEstimate>> {
        let outputs = self.head_outputs(x)?;
        outputs
            .columns()
            .into_iter()
            .map(|col| summarize(col, self.config.beta))
            .collect()
    }
}

fn summarize(outputs: ArrayView1<'_, f64>, beta: f64) -> Result<RewardEstimate> {
    let k = outputs.len() as f64;
    let lo = outputs.fold(f64::INFINITY, |a, &b| a.min(b));
    let hi = outputs.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if lo == hi {
        return RewardEstimate::new(lo, 0.0, beta);
    }
    let mean = outputs.sum() / k;
    let var = outputs.fold(0.0, |acc, &o| acc + (o - mean).powi(2)) / k;
    RewardEstimate::new(mean, var.sqrt(), beta)
}

pub fn enn_predict(model: &EnnModel, features: &[f64]) -> Result<RewardEstimate> {
    model.check_dim(features.len())?;
    let x = ArrayView2::from_shape((1, features.len()), features)
        .map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(model.predict_batch(x)?.remove(0))
}

/// Stack feature vectors into a row matrix.
pub fn feature_matrix<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        if r.len() != dim {
            return Err(Error::Dimension { expected: dim, got: r.len() });
        }
        data.extend_from_slice(r);
        n += 1;
    }
    Array2::from_shape_vec((n, dim), data).map_err(|e| Error::Invalid(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub chosen: Vec<f64>,
    pub rejected: Vec<f64>,
    pub triplet: PreferenceTriplet,
}

/// Append-only store of every comparison collected so far.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    entries: Vec<ReplayEntry>,
}

impl ReplayBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: ReplayEntry) {
        self.entries.push(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ReplayEntry] {
        &self.entries
    }
}

/// `min(|B|, b * rho)` entries drawn uniformly without replacement, in
/// random order.
pub fn replay_sample<'a, R: Rng + ?Sized>(
    buffer: &'a ReplayBuffer,
    batch_size: usize,
    rho: usize,
    rng: &mut R,
) -> Result<Vec<&'a ReplayEntry>> {
    if batch_size == 0 || rho == 0 {
        return Err(Error::Config("replay sample needs positive batch size and rho".into()));
    }
    let amount = buffer.len().min(batch_size.saturating_mul(rho));
    let mut picks = index::sample(rng, buffer.len(), amount).into_vec();
    picks.shuffle(rng);
    Ok(picks.into_iter().map(|i| &buffer.entries[i]).collect())
}

/// Chosen/rejected feature rows for a set of comparisons.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub chosen: Array2<f64>,
    pub rejected: Array2<f64>,
}

impl PairBatch {
    pub fn new(chosen: Array2<f64>, rejected: Array2<f64>) -> Result<Self> {
        if chosen.dim() != rejected.dim() {
            return Err(Error::Invalid("chosen and rejected batches differ in shape".into()));
        }
        Ok(Self { chosen, rejected })
    }

    pub fn from_entries(entries: &[&ReplayEntry], dim: usize) -> Result<Self> {
        Self::new(
            feature_matrix(entries.iter().map(|e| e.chosen.as_slice()), dim)?,
            feature_matrix(entries.iter().map(|e| e.rejected.as_slice()), dim)?,
        )
    }

    pub fn len(&self) -> usize {
        self.chosen.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn rows(&self, idx: &[usize]) -> PairBatch {
        PairBatch {
            chosen: self.chosen.select(Axis(0), idx),
            rejected: self.rejected.select(Axis(0), idx),
        }
    }

    fn stacked(&self) -> Array2<f64> {
        ndarray::concatenate(Axis(0), &[self.chosen.view(), self.rejected.view()])
            .expect("shapes checked at construction")
    }
}

/// Objective value with its three terms (each already weighted and averaged
/// over heads): `total = nll + centering + anchor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub nll: f64,
    pub centering: f64,
    pub anchor: f64,
}

/// `log(1 + e^{-x})` without overflow.
fn softplus_neg(x: f64) -> f64 {
    (-x).max(0.0) + (-x.abs()).exp().ln_1p()
}

struct HeadEval {
    nll: f64,
    centering: f64,
    anchor: f64,
    grad: Option<Head>,
}

#[allow(clippy::too_many_arguments)]
fn eval_head(
    head: &Head,
    anchor: &Head,
    x: ArrayView2<'_, f64>,
    n: usize,
    gamma: f64,
    zeta: f64,
    scale: f64,
    with_grad: bool,
) -> HeadEval {
    let nf = n as f64;
    let (inputs, out) = head.forward_cached(x);
    let (rc, rr) = out.view().split_at(Axis(0), n);
    let mut nll = 0.0;
    let mut centering = 0.0;
    let mut grad_out = Array1::zeros(2 * n);
    for i in 0..n {
        let diff = rc[i] - rr[i];
        let sum = rc[i] + rr[i];
        nll += softplus_neg(diff);
        centering += sum * sum;
        if with_grad {
            let miss = 1.0 - sigmoid_unchecked(diff);
            let c = 2.0 * gamma * sum;
            grad_out[i] = scale * (-miss + c) / nf;
            grad_out[n + i] = scale * (miss + c) / nf;
        }
    }
    nll /= nf;
    centering /= nf;
    let anchor_sq = head.sq_distance(anchor);
    let grad = with_grad.then(|| {
        let mut g = head.backward(&inputs, grad_out.view());
        let w = scale * 2.0 * zeta;
        if w != 0.0 {
            for ((gl, hl), al) in g.layers.iter_mut().zip(&head.layers).zip(&anchor.layers) {
                Zip::from(&mut gl.weights)
                    .and(&hl.weights)
                    .and(&al.weights)
                    .for_each(|g, &p, &a| *g += w * (p - a));
                Zip::from(&mut gl.bias)
                    .and(&hl.bias)
                    .and(&al.bias)
                    .for_each(|g, &p, &a| *g += w * (p - a));
            }
        }
        g
    });
    HeadEval { nll, centering, anchor: anchor_sq, grad }
}

fn loss_impl(
    model: &EnnModel,
    batch: &PairBatch,
    zeta: f64,
    with_grad: bool,
) -> Result<(LossBreakdown, Vec<Head>)> {
    if batch.is_empty() {
        return Err(Error::Invalid("loss needs a non-empty batch".into()));
    }
    model.check_dim(batch.chosen.ncols())?;
    let k = model.heads.len() as f64;
    let x = batch.stacked();
    let gamma = model.config.gamma;
    let mut total = LossBreakdown { total: 0.0, nll: 0.0, centering: 0.0, anchor: 0.0 };
    let mut grads = Vec::new();
    for (h, (head, anchor)) in model.heads.iter().zip(&model.anchors).enumerate() {
        let e = eval_head(head, anchor, x.view(), batch.len(), gamma, zeta, 1.0 / k, with_grad);
        let head_loss = e.nll + gamma * e.centering + zeta * e.anchor;
        if !head_loss.is_finite() {
            return Err(Error::NonFinite { head: h, detail: format!("loss {head_loss}") });
        }
        total.nll += e.nll / k;
        total.centering += gamma * e.centering / k;
        total.anchor += zeta * e.anchor / k;
        if let Some(g) = e.grad {
            if g.params().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { head: h, detail: "non-finite gradient".into() });
            }
            grads.push(g);
        }
    }
    total.total = total.nll + total.centering + total.anchor;
    Ok((total, grads))
}

/// Regularised Bradley-Terry objective at the model's current anchor weight.
pub fn enn_loss(model: &EnnModel, batch: &PairBatch) -> Result<LossBreakdown> {
    Ok(loss_impl(model, batch, model.current_zeta(), false)?.0)
}

/// Objective and its gradient, flattened in [`EnnModel::params`] order.
pub fn enn_loss_and_grad(model: &EnnModel, batch: &PairBatch) -> Result<(LossBreakdown, Vec<f64>)> {
    let (loss, grads) = loss_impl(model, batch, model.current_zeta(), true)?;
    let flat = grads.iter().flat_map(|g| g.params().copied()).collect();
    Ok((loss, flat))
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Adam {
    m: Vec<Head>,
    v: Vec<Head>,
    t: i32,
}

impl Adam {
    fn new(heads: &[Head]) -> Self {
        Self {
            m: heads.iter().map(Head::zeros_like).collect(),
            v: heads.iter().map(Head::zeros_like).collect(),
            t: 0,
        }
    }

    fn step(&mut self, heads: &mut [Head], grads: &[Head], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (k, head) in heads.iter_mut().enumerate() {
            let params = head.params_mut();
            let g = grads[k].params();
            let m = self.m[k].params_mut();
            let v = self.v[k].params_mut();
            for (((p, &g), m), v) in params.zip(g).zip(m).zip(v) {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Training call index (the model's iteration count before the call).
    pub iteration: usize,
    /// Anchor weight used for every step of this call.
    pub zeta: f64,
    pub sample_size: usize,
    /// Minibatch loss before each optimizer step.
    pub losses: Vec<f64>,
}

/// One pipeline iteration of training: draw the replay sample once, run
/// `train_steps` Adam steps over minibatches cycling through it, then advance
/// the iteration count (and with it the anchor weight).
pub fn enn_train<R: Rng + ?Sized>(
    model: &mut EnnModel,
    buffer: &ReplayBuffer,
    pipeline_batch: usize,
    rng: &mut R,
) -> Result<TrainReport> {
    let iteration = model.iteration_count;
    let zeta = model.current_zeta();
    let sample = replay_sample(buffer, pipeline_batch, model.config.rho, rng)?;
    let mut report = TrainReport { iteration, zeta, sample_size: sample.len(), losses: Vec::new() };
    if !sample.is_empty() && model.config.train_steps > 0 {
        let data = PairBatch::from_entries(&sample, model.config.feature_dim)?;
        let n = data.len();
        let mb = model.config.minibatch_size.min(n);
        let mut adam = Adam::new(&model.heads);
        let mut cursor = 0;
        for _ in 0..model.config.train_steps {
            let idx: Vec<usize> = (0..mb).map(|i| (cursor + i) % n).collect();
            cursor = (cursor + mb) % n;
            let batch = data.rows(&idx);
            let (loss, grads) = loss_impl(model, &batch, zeta, true)?;
            report.losses.push(loss.total);
            adam.step(&mut model.heads, &grads, model.config.learning_rate);
        }
    }
    model.iteration_count += 1;
    Ok(report)
}
