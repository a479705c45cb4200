use std::f64::consts::PI;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EncoderSpec, HeadConfig, LinearHead, ModelBundle, OutputLayout, SCHEMA_VERSION};
use crate::error::{invalid, GeoError, Result};
use crate::features::FeatureSet;
use crate::geo::GeoPoint;
use crate::loss::{loss_and_gradient, LossSpec};
use crate::metrics;

/// Cosine-annealed learning rate from `lr_max` at step 0 to `lr_min` at
/// `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total_steps == 0 {
        return invalid("cosine schedule needs at least one step");
    }
    if step > total_steps {
        return invalid(format!("step {step} beyond schedule length {total_steps}"));
    }
    if !(lr_max >= lr_min) {
        return invalid(format!("lr_max {lr_max} below lr_min {lr_min}"));
    }
    let progress = step as f64 / total_steps as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * progress).cos()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub seed: u64,
    /// Fraction of samples held out for per-epoch development evaluation.
    pub dev_fraction: f64,
    pub adam: AdamParams,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 16,
            lr_max: 1e-5,
            lr_min: 1e-6,
            seed: 42,
            dev_fraction: 0.1,
            adam: AdamParams::default(),
        }
    }
}

/// One labeled tweet: the key-feature embedding and one optional embedding
/// per minor feature. Features stay separate; they are never concatenated.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub label: GeoPoint,
    pub key: Vec<f64>,
    pub minor: Vec<Option<Vec<f64>>>,
}

/// Batch-mean loss components for one optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub kf_spatial: f64,
    pub kf_prob: Option<f64>,
    /// Mean over samples that carry a minor feature; `None` if none did.
    pub mf_spatial: Option<f64>,
    pub mf_prob: Option<f64>,
    /// Mean probabilistic component over every feature that has one.
    pub prob: Option<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: Option<f64>,
    pub dev_median_sae_km: Option<f64>,
    pub tweets_per_second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
    pub train_samples: usize,
    pub dev_samples: usize,
}

struct Adam {
    params: AdamParams,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(len: usize, params: AdamParams) -> Self {
        Self { params, m: vec![0.0; len], v: vec![0.0; len] }
    }

    fn step(&mut self, values: &mut [f64], grad: &[f64], lr: f64, t: i32) {
        let AdamParams { beta1, beta2, eps } = self.params;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for i in 0..values.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// A head together with its optimizer state and gradient accumulators.
struct Trainable {
    head: LinearHead,
    spec: LossSpec,
    grad_w: Vec<f64>,
    grad_b: Vec<f64>,
    opt_w: Adam,
    opt_b: Adam,
    raw: Vec<f64>,
    raw_grad: Vec<f64>,
}

impl Trainable {
    fn new(head: LinearHead, spec: LossSpec, adam: AdamParams) -> Self {
        let (nw, nb) = (head.weight.len(), head.bias.len());
        Self {
            spec,
            grad_w: vec![0.0; nw],
            grad_b: vec![0.0; nb],
            opt_w: Adam::new(nw, adam),
            opt_b: Adam::new(nb, adam),
            raw: vec![0.0; nb],
            raw_grad: vec![0.0; nb],
            head,
        }
    }

    fn zero_grad(&mut self) {
        self.grad_w.fill(0.0);
        self.grad_b.fill(0.0);
    }

    /// Adds `scale ·` the gradient of this sample's feature loss.
    fn accumulate(&mut self, x: &[f64], label: &GeoPoint, scale: f64) -> Result<crate::loss::LossBreakdown> {
        self.head.forward_into(x, &mut self.raw)?;
        let b = loss_and_gradient(label, &self.raw, self.spec, &mut self.raw_grad)?;
        let out = self.head.out_dim;
        for (gb, g) in self.grad_b.iter_mut().zip(&self.raw_grad) {
            *gb += scale * g;
        }
        for (xi, row) in x.iter().zip(self.grad_w.chunks_exact_mut(out)) {
            if *xi == 0.0 {
                continue;
            }
            let s = scale * xi;
            for (gw, g) in row.iter_mut().zip(&self.raw_grad) {
                *gw += s * g;
            }
        }
        Ok(b)
    }

    fn loss_only(&mut self, x: &[f64], label: &GeoPoint) -> Result<crate::loss::LossBreakdown> {
        self.head.forward_into(x, &mut self.raw)?;
        loss_and_gradient(label, &self.raw, self.spec, &mut self.raw_grad)
    }

    fn apply(&mut self, lr: f64, t: i32) {
        self.opt_w.step(&mut self.head.weight, &self.grad_w, lr, t);
        self.opt_b.step(&mut self.head.bias, &self.grad_b, lr, t);
    }
}

fn centroid(labels: &[GeoPoint]) -> GeoPoint {
    let n = labels.len() as f64;
    let lon = labels.iter().map(|p| p.lon).sum::<f64>() / n;
    let lat = labels.iter().map(|p| p.lat).sum::<f64>() / n;
    GeoPoint::raw(lon, lat)
}

/// Initial point biases: the label centroid for one outcome, otherwise a
/// farthest-point traversal of the training labels on the degree plane,
/// starting from the label nearest the centroid.
pub(crate) fn anchor_points(labels: &[GeoPoint], count: usize) -> Vec<GeoPoint> {
    let center = centroid(labels);
    if count == 1 {
        return vec![center];
    }
    let nearest = labels
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.sq_dist(&center).total_cmp(&b.sq_dist(&center)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut anchors = vec![labels[nearest]];
    let mut gap: Vec<f64> = labels.iter().map(|p| p.sq_dist(&labels[nearest])).collect();
    while anchors.len() < count {
        let (best, _) = gap
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &g)| if g > acc.1 { (i, g) } else { acc });
        let chosen = labels[best];
        anchors.push(chosen);
        for (g, p) in gap.iter_mut().zip(labels) {
            *g = g.min(p.sq_dist(&chosen));
        }
    }
    anchors
}

fn seed_point_bias(head: &mut LinearHead, anchors: &[GeoPoint], config_kind: super::HeadKind, outcomes: usize) {
    let layout = OutputLayout::new(config_kind, outcomes);
    debug_assert_eq!(layout.points.len(), 2 * anchors.len());
    for (i, a) in anchors.iter().enumerate() {
        head.bias[2 * i] = a.lon;
        head.bias[2 * i + 1] = a.lat;
    }
}

fn check_sample(sample: &TrainSample, config: &HeadConfig, index: usize) -> Result<()> {
    if sample.key.len() != config.embedding_dim {
        return invalid(format!(
            "sample {index}: key embedding has length {}, expected {}",
            sample.key.len(),
            config.embedding_dim
        ));
    }
    if sample.minor.len() != config.minor_features {
        return invalid(format!(
            "sample {index}: {} minor features, config has {}",
            sample.minor.len(),
            config.minor_features
        ));
    }
    if let Some(bad) = sample.minor.iter().flatten().find(|e| e.len() != config.embedding_dim) {
        return invalid(format!("sample {index}: minor embedding has length {}", bad.len()));
    }
    if !sample.label.in_range() {
        return invalid(format!("sample {index}: label {:?} outside WGS84 ranges", sample.label));
    }
    Ok(())
}

/// Mini-batch training of the key head and minor heads on the mean
/// per-tweet total loss, with Adam and a cosine learning-rate schedule.
///
/// Samples are shuffled once with `opts.seed` to split off the development
/// set, then reshuffled every epoch. The result is bitwise reproducible for
/// a fixed seed.
pub fn train(
    data: &[TrainSample],
    config: &HeadConfig,
    encoder: EncoderSpec,
    key_feature: FeatureSet,
    minor_feature_sets: Vec<FeatureSet>,
    opts: &TrainOptions,
) -> Result<(ModelBundle, TrainReport)> {
    config.validate()?;
    if data.is_empty() {
        return invalid("training set is empty");
    }
    if opts.batch_size == 0 || opts.epochs == 0 {
        return invalid("batch_size and epochs must be positive");
    }
    if !(0.0..1.0).contains(&opts.dev_fraction) {
        return invalid(format!("dev_fraction {} outside [0, 1)", opts.dev_fraction));
    }
    if encoder.dim() != config.embedding_dim {
        return invalid(format!("encoder dim {} differs from embedding_dim {}", encoder.dim(), config.embedding_dim));
    }
    if minor_feature_sets.len() != config.minor_features {
        return invalid("one feature set per minor head is required");
    }
    for (i, s) in data.iter().enumerate() {
        check_sample(s, config, i)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_dev = ((data.len() as f64) * opts.dev_fraction).floor() as usize;
    let n_dev = n_dev.min(data.len() - 1);
    let (dev_idx, train_idx) = order.split_at(n_dev);
    let dev_idx = dev_idx.to_vec();
    let mut train_idx = train_idx.to_vec();

    let labels: Vec<GeoPoint> = train_idx.iter().map(|&i| data[i].label).collect();
    let dim = config.embedding_dim;

    let mut key_head = LinearHead::init(dim, config.kind, config.outcomes, &mut rng)?;
    seed_point_bias(&mut key_head, &anchor_points(&labels, config.outcomes), config.kind, config.outcomes);
    let mut key = Trainable::new(key_head, config.key_spec(), opts.adam);

    let minor_kind = config.kind.minor_kind();
    let center = anchor_points(&labels, 1);
    let mut minors = Vec::with_capacity(config.minor_features);
    for _ in 0..config.minor_features {
        let mut head = LinearHead::init(dim, minor_kind, 1, &mut rng)?;
        seed_point_bias(&mut head, &center, minor_kind, 1);
        minors.push(Trainable::new(head, config.minor_spec(), opts.adam));
    }

    let steps_per_epoch = train_idx.len().div_ceil(opts.batch_size);
    let total_steps = steps_per_epoch * opts.epochs;
    let mut report = TrainReport { steps: Vec::with_capacity(total_steps), epochs: Vec::new(), train_samples: train_idx.len(), dev_samples: dev_idx.len() };
    let probabilistic = config.kind.is_probabilistic();

    let mut step = 0usize;
    for epoch in 0..opts.epochs {
        let started = Instant::now();
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in train_idx.chunks(opts.batch_size) {
            let lr = cosine_lr(step, total_steps, opts.lr_max, opts.lr_min)?;
            key.zero_grad();
            minors.iter_mut().for_each(Trainable::zero_grad);

            let mut acc = StepAccumulator::default();
            let inv_batch = 1.0 / batch.len() as f64;
            for &idx in batch {
                let sample = &data[idx];
                let n_features = 1 + sample.minor.iter().filter(|m| m.is_some()).count();
                let scale = inv_batch / n_features as f64;

                let kb = key.accumulate(&sample.key, &sample.label, scale)?;
                let mut tweet_total = kb.total;
                acc.kf_spatial += kb.spatial;
                if let Some(p) = kb.probabilistic {
                    acc.kf_prob += p;
                    acc.prob += p;
                    acc.prob_count += 1;
                }
                for (head, emb) in minors.iter_mut().zip(&sample.minor) {
                    let Some(emb) = emb else { continue };
                    let mb = head.accumulate(emb, &sample.label, scale)?;
                    tweet_total += mb.total;
                    acc.mf_spatial += mb.spatial;
                    acc.mf_count += 1;
                    if let Some(p) = mb.probabilistic {
                        acc.mf_prob += p;
                        acc.prob += p;
                        acc.prob_count += 1;
                    }
                }
                acc.total += tweet_total / n_features as f64;
            }

            let n = batch.len() as f64;
            let log = StepLog {
                step,
                epoch,
                lr,
                kf_spatial: acc.kf_spatial / n,
                kf_prob: probabilistic.then(|| acc.kf_prob / n),
                mf_spatial: (acc.mf_count > 0).then(|| acc.mf_spatial / acc.mf_count as f64),
                mf_prob: (probabilistic && acc.mf_count > 0).then(|| acc.mf_prob / acc.mf_count as f64),
                prob: (acc.prob_count > 0).then(|| acc.prob / acc.prob_count as f64),
                total: acc.total / n,
            };
            if !log.total.is_finite() {
                return Err(GeoError::Numeric(format!(
                    "non-finite batch loss at epoch {epoch}, step {step} (kf_spatial={}, prob={:?})",
                    log.kf_spatial, log.prob
                )));
            }
            epoch_loss += log.total * n;
            report.steps.push(log);

            let t = (step + 1) as i32;
            key.apply(lr, t);
            for head in &mut minors {
                head.apply(lr, t);
            }
            if !key.head.is_finite() || minors.iter().any(|h| !h.head.is_finite()) {
                return Err(GeoError::Numeric(format!("head parameters became non-finite at step {step}")));
            }
            step += 1;
        }

        let elapsed = started.elapsed().as_secs_f64().max(1e-9);
        let (dev_loss, dev_median) = if dev_idx.is_empty() {
            (None, None)
        } else {
            let (l, m) = dev_evaluate(&dev_idx, data, &mut key, config)?;
            (Some(l), Some(m))
        };
        log::info!(
            "epoch {epoch}: train loss {:.4}, dev loss {:?}, dev median SAE {:?} km",
            epoch_loss / train_idx.len() as f64,
            dev_loss,
            dev_median
        );
        report.epochs.push(EpochLog {
            epoch,
            train_loss: epoch_loss / train_idx.len() as f64,
            dev_loss,
            dev_median_sae_km: dev_median,
            tweets_per_second: train_idx.len() as f64 / elapsed,
        });
    }

    let bundle = ModelBundle {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        encoder,
        key_feature,
        minor_feature_sets,
        key_head: key.head,
        minor_heads: minors.into_iter().map(|t| t.head).collect(),
    };
    Ok((bundle, report))
}

#[derive(Default)]
struct StepAccumulator {
    kf_spatial: f64,
    kf_prob: f64,
    mf_spatial: f64,
    mf_prob: f64,
    mf_count: usize,
    prob: f64,
    prob_count: usize,
    total: f64,
}

/// Key-feature loss and median SAE on the development split.
fn dev_evaluate(dev: &[usize], data: &[TrainSample], key: &mut Trainable, config: &HeadConfig) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut errors = Vec::with_capacity(dev.len());
    for &i in dev {
        let s = &data[i];
        loss += key.loss_only(&s.key, &s.label)?.total;
        let parsed = super::parse_output(&key.raw, config.kind, config.outcomes, config.covariance_activation)?;
        let (pred, _) = parsed.to_prediction()?.clamped();
        errors.push(metrics::sae(&s.label, &pred));
    }
    Ok((loss / dev.len() as f64, metrics::median(&mut errors)))
}
