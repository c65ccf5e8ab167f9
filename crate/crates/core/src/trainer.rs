//! Linear adapter training with the Hoyer contrastive loss.
//!
//! For a batch of `N` tuples `(x_i, x_i+, x_i-)` mapped through `h = W x`,
//! item `i` has logits `z_ik = Hoyer(h_i - t_k) / tau` against every
//! positive and every hard negative `t_k` in the batch, and loss
//! `l_i = logsumexp(z_i) - z_ii`. The batch loss is the mean of `l_i`.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DualCorpus, EmbeddingMatrix, EmbeddingSpace, QueryRecord, TupleRef};
use crate::engine::with_workers;
use crate::error::{Error, Result};
use crate::vecmath::NORM_EPSILON;

const SPAD_MAGIC: &[u8; 4] = b"SPAD";
const SPAD_VERSION: u32 = 1;
const INIT_NOISE: f64 = 0.01;

/// Anchor, positive (a contradiction) and hard negative (a paraphrase).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTuple {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub hard_negative: Vec<f64>,
}

impl TrainingTuple {
    pub fn new(anchor: Vec<f64>, positive: Vec<f64>, hard_negative: Vec<f64>) -> Result<Self> {
        let d = anchor.len();
        for v in [&positive, &hard_negative] {
            if v.len() != d {
                return Err(Error::DimensionMismatch { left: d, right: v.len() });
            }
        }
        if d < 2 {
            return Err(Error::InvalidEmbedding(format!("dimension {d} < 2")));
        }
        if [&anchor, &positive, &hard_negative].iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidEmbedding("non-finite value in training tuple".into()));
        }
        Ok(Self { anchor, positive, hard_negative })
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }
}

/// Looks up the embeddings of id tuples in one space of `corpus`.
pub fn resolve_tuples(tuples: &[TupleRef], corpus: &DualCorpus, space: &str) -> Result<Vec<TrainingTuple>> {
    let get = |id: &crate::corpus::DocId| -> Result<Vec<f64>> {
        if !corpus.contains(id.as_str()) {
            return Err(Error::Alignment(format!("tuple references unknown document {:?}", id.as_str())));
        }
        Ok(corpus.embedding(space, id.as_str())?.iter().map(|&x| x as f64).collect())
    };
    tuples
        .iter()
        .map(|t| TrainingTuple::new(get(&t.anchor)?, get(&t.positive)?, get(&t.hard_negative)?))
        .collect()
}

/// Linear map `h = W x`, `W` row-major `d_out x d_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    d_out: usize,
    d_in: usize,
    weights: Vec<f64>,
}

impl Adapter {
    pub fn new(d_out: usize, d_in: usize, weights: Vec<f64>) -> Result<Self> {
        if d_out < 2 || d_in == 0 {
            return Err(Error::InvalidEmbedding(format!("adapter shape {d_out}x{d_in}")));
        }
        if weights.len() != d_out * d_in {
            return Err(Error::DimensionMismatch { left: weights.len(), right: d_out * d_in });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidEmbedding("non-finite adapter weight".into()));
        }
        Ok(Self { d_out, d_in, weights })
    }

    pub fn identity(d: usize) -> Result<Self> {
        let mut w = vec![0.0; d * d];
        for i in 0..d {
            w[i * d + i] = 1.0;
        }
        Self::new(d, d, w)
    }

    /// Identity plus N(0, sigma^2) noise on every entry.
    pub fn perturbed_identity(d: usize, sigma: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::perturbed_identity_with(d, sigma, &mut rng)
    }

    fn perturbed_identity_with(d: usize, sigma: f64, rng: &mut impl Rng) -> Result<Self> {
        let mut a = Self::identity(d)?;
        for w in &mut a.weights {
            *w += sigma * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(a)
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn apply<T: Copy + Into<f64>>(&self, x: &[T]) -> Result<Vec<f64>> {
        if x.len() != self.d_in {
            return Err(Error::DimensionMismatch { left: x.len(), right: self.d_in });
        }
        Ok(self
            .weights
            .chunks_exact(self.d_in)
            .map(|row| row.iter().zip(x).map(|(&w, &v)| w * v.into()).sum())
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(SPAD_MAGIC)?;
        w.write_all(&SPAD_VERSION.to_le_bytes())?;
        w.write_all(&(self.d_out as u32).to_le_bytes())?;
        w.write_all(&(self.d_in as u32).to_le_bytes())?;
        for &x in &self.weights {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let bad = |msg: &str| Error::format(path, msg);
        if bytes.len() < 16 || &bytes[..4] != SPAD_MAGIC {
            return Err(bad("not an adapter file"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        if u32_at(4) != SPAD_VERSION {
            return Err(bad(&format!("unsupported version {}", u32_at(4))));
        }
        let (d_out, d_in) = (u32_at(8) as usize, u32_at(12) as usize);
        let body = &bytes[16..];
        if body.len() != d_out * d_in * 4 {
            return Err(bad(&format!("expected {} weight bytes, found {}", d_out * d_in * 4, body.len())));
        }
        let weights = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        Self::new(d_out, d_in, weights).map_err(|e| bad(&e.to_string()))
    }
}

/// Hoyer sparsity of `delta` and its gradient with respect to `delta`.
/// With `eps > 0` every `|x|` is replaced by `sqrt(x^2 + eps)`.
/// `None` for a degenerate difference.
fn hoyer_terms(delta: &[f64], eps: f64, want_grad: bool) -> Option<(f64, Vec<f64>)> {
    let sqrt_d = (delta.len() as f64).sqrt();
    let l2 = delta.iter().map(|x| x * x).sum::<f64>().sqrt();
    if l2 < NORM_EPSILON {
        return None;
    }
    let abs = |x: f64| if eps > 0.0 { (x * x + eps).sqrt() } else { x.abs() };
    let l1: f64 = delta.iter().map(|&x| abs(x)).sum();
    let value = (sqrt_d - l1 / l2) / (sqrt_d - 1.0);
    if !want_grad {
        return Some((value, Vec::new()));
    }
    let l2_cubed = l2 * l2 * l2;
    let grad = delta
        .iter()
        .map(|&x| {
            let sign = if eps > 0.0 {
                x / abs(x)
            } else if x == 0.0 {
                0.0
            } else {
                x.signum()
            };
            -(sign / l2 - l1 * x / l2_cubed) / (sqrt_d - 1.0)
        })
        .collect();
    Some((value, grad))
}

struct ItemTerms {
    loss: f64,
    /// d loss / d h_i, scaled for the batch mean.
    anchor_grad: Vec<f64>,
    /// d loss / d t_k for every partner `k` (positives then negatives).
    partner_grads: Vec<Vec<f64>>,
}

fn item_terms(
    i: usize,
    anchors: &[Vec<f64>],
    partners: &[Vec<f64>],
    tau: f64,
    eps: f64,
    want_grad: bool,
) -> Result<ItemTerms> {
    let n = anchors.len();
    let h = &anchors[i];
    let mut z = Vec::with_capacity(partners.len());
    let mut g = Vec::with_capacity(if want_grad { partners.len() } else { 0 });
    let mut delta = vec![0.0; h.len()];
    for (k, t) in partners.iter().enumerate() {
        for ((d, a), b) in delta.iter_mut().zip(h).zip(t) {
            *d = a - b;
        }
        let (v, grad) = hoyer_terms(&delta, eps, want_grad).ok_or(Error::DegeneratePair { item: i, partner: k })?;
        z.push(v / tau);
        if want_grad {
            g.push(grad);
        }
    }
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    let loss = (lse - z[i]).max(0.0);
    let mut terms = ItemTerms { loss, anchor_grad: Vec::new(), partner_grads: Vec::new() };
    if want_grad {
        let mut anchor_grad = vec![0.0; h.len()];
        let mut partner_grads = Vec::with_capacity(partners.len());
        for (k, gk) in g.into_iter().enumerate() {
            let p = (z[k] - lse).exp();
            let c = (p - if k == i { 1.0 } else { 0.0 }) / (tau * n as f64);
            for (a, &x) in anchor_grad.iter_mut().zip(&gk) {
                *a += c * x;
            }
            partner_grads.push(gk.into_iter().map(|x| -c * x).collect());
        }
        terms.anchor_grad = anchor_grad;
        terms.partner_grads = partner_grads;
    }
    Ok(terms)
}

/// Mean and per-item loss of a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub mean: f64,
    pub per_item: Vec<f64>,
}

fn check_batch(batch: &[TrainingTuple], tau: f64) -> Result<usize> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidTemperature(tau));
    }
    let first = batch.first().ok_or_else(|| Error::Config("empty batch".into()))?;
    let d = first.dim();
    if let Some(t) = batch.iter().find(|t| t.dim() != d) {
        return Err(Error::DimensionMismatch { left: d, right: t.dim() });
    }
    Ok(d)
}

fn batch_terms(
    anchors: &[Vec<f64>],
    partners: &[Vec<f64>],
    tau: f64,
    eps: f64,
    want_grad: bool,
) -> Result<Vec<ItemTerms>> {
    (0..anchors.len())
        .into_par_iter()
        .map(|i| item_terms(i, anchors, partners, tau, eps, want_grad))
        .collect()
}

fn summarize(terms: &[ItemTerms]) -> BatchLoss {
    let per_item: Vec<f64> = terms.iter().map(|t| t.loss).collect();
    let mean = per_item.iter().sum::<f64>() / per_item.len() as f64;
    BatchLoss { mean, per_item }
}

fn split_batch(batch: &[TrainingTuple]) -> (Vec<&[f64]>, Vec<&[f64]>) {
    let anchors = batch.iter().map(|t| t.anchor.as_slice()).collect();
    let partners = batch
        .iter()
        .map(|t| t.positive.as_slice())
        .chain(batch.iter().map(|t| t.hard_negative.as_slice()))
        .collect();
    (anchors, partners)
}

/// Loss of a batch whose embeddings are already in the sparse space.
pub fn hoyer_contrastive_loss(batch: &[TrainingTuple], tau: f64) -> Result<BatchLoss> {
    check_batch(batch, tau)?;
    let (a, p) = split_batch(batch);
    let a: Vec<Vec<f64>> = a.into_iter().map(<[f64]>::to_vec).collect();
    let p: Vec<Vec<f64>> = p.into_iter().map(<[f64]>::to_vec).collect();
    Ok(summarize(&batch_terms(&a, &p, tau, 0.0, false)?))
}

fn adapt_batch(batch: &[TrainingTuple], adapter: &Adapter) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let (a, p) = split_batch(batch);
    let a = a.into_iter().map(|x| adapter.apply(x)).collect::<Result<_>>()?;
    let p = p.into_iter().map(|x| adapter.apply(x)).collect::<Result<_>>()?;
    Ok((a, p))
}

/// Loss of base-space tuples mapped through `adapter`.
pub fn adapted_loss(batch: &[TrainingTuple], tau: f64, adapter: &Adapter, eps: f64) -> Result<BatchLoss> {
    check_batch(batch, tau)?;
    let (a, p) = adapt_batch(batch, adapter)?;
    Ok(summarize(&batch_terms(&a, &p, tau, eps, false)?))
}

/// Batch loss and its gradient with respect to the adapter weights
/// (row-major, same shape as `W`). `|x|` uses `sign(0) = 0` unless
/// `eps > 0` selects smoothing.
pub fn loss_gradient(batch: &[TrainingTuple], tau: f64, adapter: &Adapter, eps: f64) -> Result<(BatchLoss, Vec<f64>)> {
    check_batch(batch, tau)?;
    let (a, p) = adapt_batch(batch, adapter)?;
    let terms = batch_terms(&a, &p, tau, eps, true)?;
    let (d_out, d_in) = (adapter.d_out, adapter.d_in);
    // partner gradients summed over items in index order
    let mut partner_sum = vec![vec![0.0; d_out]; p.len()];
    for t in &terms {
        for (acc, g) in partner_sum.iter_mut().zip(&t.partner_grads) {
            for (x, y) in acc.iter_mut().zip(g) {
                *x += y;
            }
        }
    }
    let (base_a, base_p) = split_batch(batch);
    let mut grad = vec![0.0; d_out * d_in];
    let outer = |grad: &mut [f64], g: &[f64], x: &[f64]| {
        for (row, &gr) in grad.chunks_exact_mut(d_in).zip(g) {
            for (w, &xv) in row.iter_mut().zip(x) {
                *w += gr * xv;
            }
        }
    };
    for (t, x) in terms.iter().zip(&base_a) {
        outer(&mut grad, &t.anchor_grad, x);
    }
    for (g, x) in partner_sum.iter().zip(&base_p) {
        outer(&mut grad, g, x);
    }
    Ok((summarize(&terms), grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub subgradient_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { temperature: 0.02, batch_size: 64, epochs: 3, learning_rate: 1e-3, seed: 0, subgradient_epsilon: 0.0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidTemperature(self.temperature));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(self.subgradient_epsilon >= 0.0 && self.subgradient_epsilon.is_finite()) {
            return Err(Error::Config("subgradient_epsilon must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
    pub batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub epochs: Vec<EpochLoss>,
}

impl LossCurve {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub initial: Adapter,
    pub adapter: Adapter,
    pub loss_curve: LossCurve,
}

/// Groups tuples into batches in the given order. A tuple is deferred to a
/// later batch when it is an exact duplicate of a batched tuple, when its
/// anchor equals a batched positive or negative, or when its positive or
/// negative equals a batched anchor; such pairs would have a zero difference.
fn make_batches(order: &[usize], keys: &[[usize; 3]], batch_size: usize) -> Vec<Vec<usize>> {
    let mut pending = order.to_vec();
    let mut out = Vec::new();
    while !pending.is_empty() {
        let mut batch = Vec::new();
        let mut anchors = HashSet::new();
        let mut partners = HashSet::new();
        let mut seen = HashSet::new();
        let mut rest = Vec::new();
        for t in pending {
            let [a, p, n] = keys[t];
            let fits = batch.len() < batch_size
                && !partners.contains(&a)
                && !anchors.contains(&p)
                && !anchors.contains(&n)
                && !seen.contains(&keys[t])
                // the tuple against itself
                && a != p
                && a != n;
            if fits || batch.is_empty() {
                batch.push(t);
                anchors.insert(a);
                partners.insert(p);
                partners.insert(n);
                seen.insert(keys[t]);
            } else {
                rest.push(t);
            }
        }
        out.push(batch);
        pending = rest;
    }
    out
}

/// Identifies bit-identical vectors so batch conflicts are detected by value.
fn tuple_keys(tuples: &[TrainingTuple]) -> Vec<[usize; 3]> {
    let mut ids: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut key = |v: &[f64]| {
        let bits: Vec<u64> = v.iter().map(|x| x.to_bits()).collect();
        let next = ids.len();
        *ids.entry(bits).or_insert(next)
    };
    tuples.iter().map(|t| [key(&t.anchor), key(&t.positive), key(&t.hard_negative)]).collect()
}

/// Trains a square adapter initialized at identity plus N(0, 0.01^2) noise
/// with plain gradient descent. Batches come from a seeded shuffle each
/// epoch. The result does not depend on `workers`.
pub fn train(tuples: &[TrainingTuple], cfg: &TrainConfig, workers: usize) -> Result<TrainOutcome> {
    cfg.validate()?;
    let d = tuples.first().ok_or_else(|| Error::Config("no training tuples".into()))?.dim();
    if let Some(t) = tuples.iter().find(|t| t.dim() != d) {
        return Err(Error::DimensionMismatch { left: d, right: t.dim() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let initial = Adapter::perturbed_identity_with(d, INIT_NOISE, &mut rng)?;
    let keys = tuple_keys(tuples);
    let mut adapter = initial.clone();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    with_workers(workers, || -> Result<()> {
        for epoch in 0..cfg.epochs {
            let mut order: Vec<usize> = (0..tuples.len()).collect();
            order.shuffle(&mut rng);
            let batches = make_batches(&order, &keys, cfg.batch_size);
            let mut total = 0.0;
            for idx in &batches {
                let batch: Vec<TrainingTuple> = idx.iter().map(|&i| tuples[i].clone()).collect();
                let (loss, grad) = loss_gradient(&batch, cfg.temperature, &adapter, cfg.subgradient_epsilon)?;
                total += loss.mean;
                if cfg.learning_rate > 0.0 {
                    for (w, g) in adapter.weights.iter_mut().zip(&grad) {
                        *w -= cfg.learning_rate * g;
                    }
                }
            }
            if adapter.weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::Config(format!("training diverged in epoch {epoch}; lower learning_rate")));
            }
            let mean_loss = total / batches.len() as f64;
            log::info!("epoch {epoch}: mean loss {mean_loss:.6} over {} batches", batches.len());
            epochs.push(EpochLoss { epoch, mean_loss, batches: batches.len() });
        }
        Ok(())
    })??;
    Ok(TrainOutcome { initial, adapter, loss_curve: LossCurve { epochs } })
}

fn adapt_rows(adapter: &Adapter, rows: &EmbeddingMatrix) -> Result<Vec<f32>> {
    if rows.dim() != adapter.d_in {
        return Err(Error::DimensionMismatch { left: rows.dim(), right: adapter.d_in });
    }
    let mut out = Vec::with_capacity(rows.rows() * adapter.d_out);
    for r in rows.iter_rows() {
        out.extend(adapter.apply(r)?.into_iter().map(|x| x as f32));
    }
    Ok(out)
}

/// Adds space `target` holding `W x` for every row of space `source`.
pub fn apply_adapter(adapter: &Adapter, corpus: &DualCorpus, source: &str, target: &str) -> Result<DualCorpus> {
    if corpus.has_space(target) {
        return Err(Error::SpaceExists(target.into()));
    }
    let src = corpus.space(source)?;
    let data = adapt_rows(adapter, &src.matrix)?;
    let space = EmbeddingSpace::new(target, adapter.d_out, format!("adapter({source})"))?;
    corpus.clone().with_space(space, EmbeddingMatrix::new(adapter.d_out, data)?)
}

/// Adds embedding `target` to every query, mapped from `source`.
pub fn apply_adapter_queries(
    adapter: &Adapter,
    queries: &[QueryRecord],
    source: &str,
    target: &str,
) -> Result<Vec<QueryRecord>> {
    queries
        .iter()
        .map(|q| {
            if q.embeddings.contains_key(target) {
                return Err(Error::SpaceExists(target.into()));
            }
            let v = adapter.apply(q.embedding(source)?)?;
            let mut q = q.clone();
            q.embeddings.insert(target.into(), v.into_iter().map(|x| x as f32).collect());
            Ok(q)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub dim: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub step: f64,
    pub points: usize,
    pub seed: u64,
    pub subgradient_epsilon: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            batch_size: 4,
            temperature: 0.02,
            step: 1e-5,
            points: 20,
            seed: 0,
            subgradient_epsilon: 0.0,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckPoint {
    pub loss: f64,
    pub gradient_norm: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub points: Vec<GradcheckPoint>,
    pub max_relative_error: f64,
    pub passed: bool,
}

/// `‖a - b‖ / max(‖a‖, ‖b‖)`, 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < NORM_EPSILON {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of the mean batch loss with respect to every adapter
/// weight.
pub fn numeric_gradient(batch: &[TrainingTuple], tau: f64, adapter: &Adapter, eps: f64, step: f64) -> Result<Vec<f64>> {
    let mut probe = adapter.clone();
    let mut out = Vec::with_capacity(adapter.weights.len());
    for k in 0..adapter.weights.len() {
        let w = adapter.weights[k];
        probe.weights[k] = w + step;
        let up = adapted_loss(batch, tau, &probe, eps)?.mean;
        probe.weights[k] = w - step;
        let down = adapted_loss(batch, tau, &probe, eps)?.mean;
        probe.weights[k] = w;
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// Compares the analytic gradient with central differences at random
/// points whose pair differences stay clear of the `|x|` kinks.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if cfg.dim < 2 || cfg.batch_size == 0 || cfg.points == 0 || !(cfg.step > 0.0) {
        return Err(Error::Config("gradcheck needs dim >= 2, batch_size >= 1, points >= 1, step > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gauss = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
    let mut points = Vec::with_capacity(cfg.points);
    while points.len() < cfg.points {
        let adapter = Adapter::perturbed_identity_with(cfg.dim, 0.3, &mut rng)?;
        let batch: Vec<TrainingTuple> = (0..cfg.batch_size)
            .map(|_| TrainingTuple::new(gauss(cfg.dim, &mut rng), gauss(cfg.dim, &mut rng), gauss(cfg.dim, &mut rng)))
            .collect::<Result<_>>()?;
        if min_abs_difference(&batch, &adapter)? < 1e-3 {
            continue;
        }
        let (loss, analytic) = loss_gradient(&batch, cfg.temperature, &adapter, cfg.subgradient_epsilon)?;
        let numeric = numeric_gradient(&batch, cfg.temperature, &adapter, cfg.subgradient_epsilon, cfg.step)?;
        points.push(GradcheckPoint {
            loss: loss.mean,
            gradient_norm: analytic.iter().map(|x| x * x).sum::<f64>().sqrt(),
            relative_error: relative_error(&analytic, &numeric),
        });
    }
    let max_relative_error = points.iter().map(|p| p.relative_error).fold(0.0, f64::max);
    Ok(GradcheckReport { points, max_relative_error, passed: max_relative_error < cfg.tolerance })
}

/// Smallest `|h_i - t_k|` coordinate over all evaluated pairs.
fn min_abs_difference(batch: &[TrainingTuple], adapter: &Adapter) -> Result<f64> {
    let (a, p) = adapt_batch(batch, adapter)?;
    let mut m = f64::INFINITY;
    for h in &a {
        for t in &p {
            for (x, y) in h.iter().zip(t) {
                m = m.min((x - y).abs());
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecmath::hoyer;

    fn tuple(a: &[f64], p: &[f64], n: &[f64]) -> TrainingTuple {
        TrainingTuple::new(a.to_vec(), p.to_vec(), n.to_vec()).unwrap()
    }

    fn random_batch(n: usize, d: usize, seed: u64) -> Vec<TrainingTuple> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = || (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>();
        (0..n).map(|_| TrainingTuple::new(v(), v(), v()).unwrap()).collect()
    }

    #[test]
    fn single_item_reduces_to_two_way_softmax() {
        let t = tuple(&[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 1.0, 1.0]);
        let tau = 0.5;
        let a = hoyer(&t.anchor, &t.positive).unwrap();
        let b = hoyer(&t.anchor, &t.hard_negative).unwrap();
        let want = -((a / tau).exp() / ((a / tau).exp() + (b / tau).exp())).ln();
        let got = hoyer_contrastive_loss(&[t], tau).unwrap();
        assert!((got.mean - want).abs() < 1e-12);
        assert_eq!(got.per_item.len(), 1);
    }

    #[test]
    fn symmetric_item_is_log_two() {
        let t = tuple(&[0.0, 0.0, 0.0], &[1.0, 2.0, 0.0], &[-1.0, -2.0, 0.0]);
        let got = hoyer_contrastive_loss(&[t], 0.02).unwrap();
        assert!((got.mean - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn loss_is_nonnegative_and_stable_at_small_tau() {
        let b = random_batch(8, 6, 1);
        for tau in [1e-4, 0.02, 1.0, 100.0] {
            let l = hoyer_contrastive_loss(&b, tau).unwrap();
            assert!(l.mean.is_finite());
            assert!(l.per_item.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn errors() {
        let b = random_batch(2, 4, 2);
        assert!(matches!(hoyer_contrastive_loss(&b, 0.0), Err(Error::InvalidTemperature(_))));
        assert!(matches!(hoyer_contrastive_loss(&b, f64::NAN), Err(Error::InvalidTemperature(_))));
        let mut deg = b.clone();
        deg[1].positive = deg[0].anchor.clone();
        assert!(matches!(hoyer_contrastive_loss(&deg, 0.1), Err(Error::DegeneratePair { item: 0, partner: 1 })));
        assert!(hoyer_contrastive_loss(&[], 0.1).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let b = random_batch(3, 5, 3);
        let a = Adapter::perturbed_identity(5, 0.2, 4).unwrap();
        let (_, g) = loss_gradient(&b, 0.1, &a, 0.0).unwrap();
        let n = numeric_gradient(&b, 0.1, &a, 0.0, 1e-6).unwrap();
        assert!(relative_error(&g, &n) < 1e-6, "{}", relative_error(&g, &n));
        let (_, gs) = loss_gradient(&b, 0.1, &a, 1e-3).unwrap();
        let ns = numeric_gradient(&b, 0.1, &a, 1e-3, 1e-6).unwrap();
        assert!(relative_error(&gs, &ns) < 1e-6);
    }

    #[test]
    fn gradient_permutation_invariant() {
        let b = random_batch(4, 4, 5);
        let a = Adapter::perturbed_identity(4, 0.2, 6).unwrap();
        let (l1, g1) = loss_gradient(&b, 0.05, &a, 0.0).unwrap();
        let mut r = b.clone();
        r.reverse();
        let (l2, g2) = loss_gradient(&r, 0.05, &a, 0.0).unwrap();
        assert!((l1.mean - l2.mean).abs() < 1e-12);
        assert!(relative_error(&g1, &g2) < 1e-12);
    }

    #[test]
    fn coinciding_partners_give_zero_gradient() {
        let t = tuple(&[1.0, -0.5, 0.2], &[0.3, 0.7, -1.0], &[0.3, 0.7, -1.0]);
        let a = Adapter::identity(3).unwrap();
        let (l, g) = loss_gradient(&[t], 0.02, &a, 0.0).unwrap();
        assert!((l.mean - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(g.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn gradient_independent_of_workers() {
        let b = random_batch(6, 4, 7);
        let a = Adapter::perturbed_identity(4, 0.1, 8).unwrap();
        let one = with_workers(1, || loss_gradient(&b, 0.1, &a, 0.0).unwrap()).unwrap();
        let four = with_workers(4, || loss_gradient(&b, 0.1, &a, 0.0).unwrap()).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn batches_defer_conflicts() {
        // tuple 1's anchor is tuple 0's positive; tuple 2 duplicates tuple 0 and
        // its positive is tuple 1's anchor
        let keys = vec![[0, 1, 2], [1, 3, 4], [0, 1, 2], [5, 6, 7]];
        let b = make_batches(&[0, 1, 2, 3], &keys, 10);
        assert_eq!(b, vec![vec![0, 3], vec![1], vec![2]]);
        let b = make_batches(&[0, 1, 2, 3], &keys, 1);
        assert_eq!(b.len(), 4);
    }

    #[test]
    fn zero_learning_rate_keeps_initialization() {
        let b = random_batch(10, 4, 9);
        let cfg = TrainConfig { learning_rate: 0.0, batch_size: 4, ..Default::default() };
        let out = train(&b, &cfg, 1).unwrap();
        assert_eq!(out.adapter, out.initial);
        assert_eq!(out.initial, Adapter::perturbed_identity(4, INIT_NOISE, 0).unwrap());
        assert_eq!(out.loss_curve.epochs.len(), 3);
    }

    #[test]
    fn training_is_deterministic_and_descends() {
        let b = random_batch(32, 6, 10);
        let cfg = TrainConfig { temperature: 0.1, learning_rate: 0.05, epochs: 10, batch_size: 8, seed: 3, ..Default::default() };
        let x = train(&b, &cfg, 1).unwrap();
        let y = train(&b, &cfg, 3).unwrap();
        assert_eq!(x.adapter, y.adapter);
        assert_eq!(x.loss_curve, y.loss_curve);
        let e = &x.loss_curve.epochs;
        assert!(e.last().unwrap().mean_loss < e[0].mean_loss);
    }

    #[test]
    fn bad_config() {
        let b = random_batch(2, 4, 0);
        let bad = TrainConfig { temperature: -1.0, ..Default::default() };
        assert!(matches!(train(&b, &bad, 1), Err(Error::InvalidTemperature(_))));
        let bad = TrainConfig { batch_size: 0, ..Default::default() };
        assert!(matches!(train(&b, &bad, 1), Err(Error::Config(_))));
        assert!(train(&[], &TrainConfig::default(), 1).is_err());
    }

    #[test]
    fn spad_roundtrip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.spad");
        let a = Adapter::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 0.5]).unwrap();
        a.save(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"SPAD");
        assert_eq!(bytes[4..16], [1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(bytes[16..20], 1.0f32.to_le_bytes());
        assert_eq!(Adapter::load(&path).unwrap(), a);
        fs::write(&path, &bytes[..30]).unwrap();
        assert!(matches!(Adapter::load(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn apply_identity_and_space_exists() {
        let ids = vec![crate::corpus::DocId::new("a").unwrap(), crate::corpus::DocId::new("b").unwrap()];
        let c = DualCorpus::new(ids, vec![])
            .unwrap()
            .with_space(EmbeddingSpace::new("base", 3, "").unwrap(), EmbeddingMatrix::new(3, vec![1., 2., 3., -1., 0.5, 0.]).unwrap())
            .unwrap();
        let a = Adapter::identity(3).unwrap();
        let out = apply_adapter(&a, &c, "base", "sparse").unwrap();
        assert_eq!(out.space("sparse").unwrap().matrix, out.space("base").unwrap().matrix);
        assert!(matches!(apply_adapter(&a, &out, "base", "sparse"), Err(Error::SpaceExists(_))));
        assert!(matches!(apply_adapter(&a, &c, "nope", "x"), Err(Error::MissingSpace(_))));
        let wide = Adapter::identity(4).unwrap();
        assert!(matches!(apply_adapter(&wide, &c, "base", "x"), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn gradcheck_defaults_pass() {
        let r = gradcheck(&GradcheckConfig { points: 3, ..Default::default() }).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.points.len(), 3);
    }
}
