//! Wrapper-layer heads: an affine map from embedding space to raw outputs,
//! the raw output layout of each head kind, and the model bundle.
//!
//! Raw outputs are laid out as three contiguous blocks:
//!
//! ```text
//! [ lon_0, lat_0, ..., lon_{M-1}, lat_{M-1} | w_0 .. w_{M-1} | c_0 .. c_{M-1} ]
//!   points (always)                          weights (MOP)    covariances (prob)
//! ```
//!
//! Weights pass through softmax and covariances through the configured
//! SoftPlus activation; points are used verbatim.

mod checkpoint;
mod train;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, SCHEMA_VERSION};
pub use train::{
    cosine_lr, train, AdamParams, EpochLog, StepLog, TrainOptions, TrainReport, TrainSample,
};

use crate::error::{invalid, GeoError, Result};
use crate::features::{encode_stub, FeatureSet};
use crate::gmm::{self, CovActivation, Prediction};
use crate::loss::{LossCombination, LossSpec, ParsedOutput};
use crate::geo::GeoPoint;

/// Head kind by output form and number of outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Geospatial single outcome: one point.
    Gsop,
    /// Geospatial multiple outcomes: weighted points.
    Gmop,
    /// Probabilistic single outcome: one spherical Gaussian.
    Psop,
    /// Probabilistic multiple outcomes: a Gaussian mixture.
    Pmop,
}

impl HeadKind {
    pub fn is_probabilistic(self) -> bool {
        matches!(self, HeadKind::Psop | HeadKind::Pmop)
    }

    pub fn is_single(self) -> bool {
        matches!(self, HeadKind::Gsop | HeadKind::Psop)
    }

    /// Single-outcome kind of the same output form, used for minor heads.
    pub fn minor_kind(self) -> HeadKind {
        if self.is_probabilistic() {
            HeadKind::Psop
        } else {
            HeadKind::Gsop
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            HeadKind::Gsop => "GSOP",
            HeadKind::Gmop => "GMOP",
            HeadKind::Psop => "PSOP",
            HeadKind::Pmop => "PMOP",
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for HeadKind {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gsop" => Ok(HeadKind::Gsop),
            "gmop" => Ok(HeadKind::Gmop),
            "psop" => Ok(HeadKind::Psop),
            "pmop" => Ok(HeadKind::Pmop),
            other => invalid(format!("unknown head kind {other:?}")),
        }
    }
}

/// Number of raw outputs for a head kind with `outcomes` points.
///
/// Multi-outcome kinds accept `outcomes == 1` here so the loss code can be
/// checked on degenerate mixtures; [`HeadConfig::validate`] rejects that
/// combination for real models.
pub fn output_size(kind: HeadKind, outcomes: usize) -> Result<usize> {
    if outcomes == 0 {
        return invalid("at least one outcome is required");
    }
    if kind.is_single() && outcomes != 1 {
        return invalid(format!("{kind} predicts a single outcome, got {outcomes}"));
    }
    Ok(match kind {
        HeadKind::Gsop => 2,
        HeadKind::Psop => 3,
        HeadKind::Gmop => 3 * outcomes,
        HeadKind::Pmop => 4 * outcomes,
    })
}

/// Index ranges of the three raw-output blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputLayout {
    pub points: Range<usize>,
    pub weights: Option<Range<usize>>,
    pub covariances: Option<Range<usize>>,
}

impl OutputLayout {
    /// Layout for an already validated `(kind, outcomes)` pair.
    pub fn new(kind: HeadKind, outcomes: usize) -> Self {
        let points = 0..2 * outcomes;
        let mut next = points.end;
        let weights = (!kind.is_single()).then(|| {
            let r = next..next + outcomes;
            next = r.end;
            r
        });
        let covariances = kind.is_probabilistic().then(|| next..next + outcomes);
        Self { points, weights, covariances }
    }
}

/// Splits raw outputs into points, weights and σ, applying softmax and the
/// covariance activation, and sorts the peaks by descending weight.
pub fn parse_output(raw: &[f64], kind: HeadKind, outcomes: usize, activation: CovActivation) -> Result<ParsedOutput> {
    let expected = output_size(kind, outcomes)?;
    if raw.len() != expected {
        return invalid(format!("raw output has length {}, expected {expected}", raw.len()));
    }
    let layout = OutputLayout::new(kind, outcomes);
    let weights = layout.weights.map(|r| gmm::softmax(&raw[r])).transpose()?;
    let sigmas: Option<Vec<f64>> = layout
        .covariances
        .map(|r| raw[r].iter().map(|&c| activation.apply(c)).collect());

    let mut order: Vec<usize> = (0..outcomes).collect();
    if let Some(w) = &weights {
        order.sort_by(|&i, &j| {
            w[j].total_cmp(&w[i])
                .then(raw[2 * i].total_cmp(&raw[2 * j]))
                .then(raw[2 * i + 1].total_cmp(&raw[2 * j + 1]))
        });
    }
    Ok(ParsedOutput {
        kind,
        points: order.iter().map(|&i| GeoPoint::raw(raw[2 * i], raw[2 * i + 1])).collect(),
        sigmas: sigmas.map(|s| order.iter().map(|&i| s[i]).collect()),
        weights: weights.map(|w| order.iter().map(|&i| w[i]).collect()),
    })
}

/// Head architecture and loss configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub kind: HeadKind,
    pub outcomes: usize,
    pub embedding_dim: usize,
    /// Number of single-outcome minor heads trained alongside the key head.
    pub minor_features: usize,
    pub covariance_activation: CovActivation,
    pub loss_combination: LossCombination,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            kind: HeadKind::Pmop,
            outcomes: 5,
            embedding_dim: 768,
            minor_features: 0,
            covariance_activation: CovActivation::LowerBounded,
            loss_combination: LossCombination::Average,
        }
    }
}

impl HeadConfig {
    pub fn new(kind: HeadKind, outcomes: usize, embedding_dim: usize) -> Self {
        Self { kind, outcomes, embedding_dim, ..Self::default() }
    }

    pub fn with_minor_features(mut self, count: usize) -> Self {
        self.minor_features = count;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.outcomes == 0 {
            return invalid("outcomes must be at least 1");
        }
        if self.kind.is_single() != (self.outcomes == 1) {
            return invalid(format!(
                "{} needs {} outcomes, got {}",
                self.kind,
                if self.kind.is_single() { "exactly 1" } else { "more than 1" },
                self.outcomes
            ));
        }
        if self.embedding_dim == 0 {
            return invalid("embedding_dim must be positive");
        }
        Ok(())
    }

    pub fn key_output_size(&self) -> usize {
        output_size(self.kind, self.outcomes).expect("validated config")
    }

    pub fn key_spec(&self) -> LossSpec {
        LossSpec {
            kind: self.kind,
            outcomes: self.outcomes,
            activation: self.covariance_activation,
            combination: self.loss_combination,
        }
    }

    pub fn minor_spec(&self) -> LossSpec {
        LossSpec { kind: self.kind.minor_kind(), outcomes: 1, ..self.key_spec() }
    }
}

/// Affine map `out = Wᵀ·x + b`; `weight` is stored input-major
/// (`in_dim` rows of `out_dim` values).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearHead {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { in_dim, out_dim, weight: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    pub fn from_parts(in_dim: usize, out_dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != in_dim * out_dim || bias.len() != out_dim {
            return invalid(format!(
                "head parts have {} weights and {} biases for a {in_dim}x{out_dim} head",
                weight.len(),
                bias.len()
            ));
        }
        Ok(Self { in_dim, out_dim, weight, bias })
    }

    /// Uniform `±1/√in_dim` weights; covariance biases start at +2 so the
    /// first σ values are wide.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, kind: HeadKind, outcomes: usize, rng: &mut R) -> Result<Self> {
        let out_dim = output_size(kind, outcomes)?;
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim).map(|_| rng.random_range(-bound..bound)).collect();
        let mut bias = vec![0.0; out_dim];
        if let Some(cov) = OutputLayout::new(kind, outcomes).covariances {
            bias[cov].fill(COV_BIAS_INIT);
        }
        Ok(Self { in_dim, out_dim, weight, bias })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.out_dim];
        self.forward_into(x, &mut out)?;
        Ok(out)
    }

    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.in_dim {
            return invalid(format!("embedding has length {}, head expects {}", x.len(), self.in_dim));
        }
        out.copy_from_slice(&self.bias);
        for (xi, row) in x.iter().zip(self.weight.chunks_exact(self.out_dim)) {
            if *xi == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

pub(crate) const COV_BIAS_INIT: f64 = 2.0;

/// `Wᵀ·embedding + b`.
pub fn forward(embedding: &[f64], head: &LinearHead) -> Result<Vec<f64>> {
    head.forward(embedding)
}

/// Where embeddings come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EncoderSpec {
    /// The built-in hashed bag-of-tokens encoder.
    HashingStub { dim: usize, seed: u64, max_tokens: usize },
    /// Embeddings computed elsewhere and imported from files.
    Imported { dim: usize, provenance: String },
}

impl EncoderSpec {
    pub fn stub(dim: usize, seed: u64) -> Self {
        EncoderSpec::HashingStub { dim, seed, max_tokens: crate::features::MAX_TOKENS }
    }

    pub fn dim(&self) -> usize {
        match self {
            EncoderSpec::HashingStub { dim, .. } | EncoderSpec::Imported { dim, .. } => *dim,
        }
    }

    /// Encodes text with the stub; imported encoders cannot encode.
    pub fn encode(&self, text: &str) -> Result<Vec<f64>> {
        match self {
            EncoderSpec::HashingStub { dim, seed, max_tokens } => {
                Ok(encode_stub(text, *dim, *seed, *max_tokens)?.into_values())
            }
            EncoderSpec::Imported { provenance, .. } => invalid(format!(
                "model uses imported embeddings ({provenance}); supply embeddings instead of text"
            )),
        }
    }
}

/// A trained model: encoder description, key head and minor heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub schema_version: u32,
    pub config: HeadConfig,
    pub encoder: EncoderSpec,
    pub key_feature: FeatureSet,
    pub minor_feature_sets: Vec<FeatureSet>,
    pub key_head: LinearHead,
    pub minor_heads: Vec<LinearHead>,
}

impl ModelBundle {
    /// Raw key-head prediction for an embedding. Minor heads are never used.
    pub fn predict_embedding(&self, embedding: &[f64]) -> Result<Prediction> {
        let raw = self.key_head.forward(embedding)?;
        let parsed = parse_output(&raw, self.config.kind, self.config.outcomes, self.config.covariance_activation)?;
        parsed.to_prediction()
    }

    pub fn parse_key_output(&self, embedding: &[f64]) -> Result<ParsedOutput> {
        let raw = self.key_head.forward(embedding)?;
        parse_output(&raw, self.config.kind, self.config.outcomes, self.config.covariance_activation)
    }
}

/// Encodes the key-feature text and runs the key head.
pub fn predict(key_text: &str, bundle: &ModelBundle) -> Result<Prediction> {
    if key_text.trim().is_empty() {
        return invalid("key feature text is empty");
    }
    let embedding = bundle.encoder.encode(key_text)?;
    bundle.predict_embedding(&embedding)
}
