//! Loss functions for the four head kinds and their gradients.
//!
//! Geospatial kinds use the squared planar distance `D²`. Probabilistic
//! kinds add the negative log-likelihood `D²/(2σ) + ln(2πσ)` of the label
//! under each spherical peak. Multi-outcome kinds combine per-peak terms
//! with their softmax weights. Gradients are closed-form with respect to
//! the raw head outputs, so they include the softmax and covariance
//! activation Jacobians.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geo::GeoPoint;
use crate::gmm::{self, CovActivation, GaussianPeak, GmmPrediction, Prediction, WeightedPoint};
use crate::head::{output_size, HeadKind, OutputLayout};

/// How a probabilistic feature combines its two loss components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossCombination {
    /// `(spatial + probabilistic) / 2`.
    #[default]
    Average,
    Sum,
    ProbOnly,
}

impl LossCombination {
    /// Coefficients `(a, b)` of `a·spatial + b·probabilistic`.
    fn coefficients(self) -> (f64, f64) {
        match self {
            LossCombination::Average => (0.5, 0.5),
            LossCombination::Sum => (1.0, 1.0),
            LossCombination::ProbOnly => (0.0, 1.0),
        }
    }

    fn combine(self, spatial: f64, probabilistic: f64) -> f64 {
        let (a, b) = self.coefficients();
        a * spatial + b * probabilistic
    }
}

/// Head output after activations: points, σ (probabilistic kinds) and
/// weights (multi-outcome kinds), sorted by descending weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedOutput {
    pub kind: HeadKind,
    pub points: Vec<GeoPoint>,
    pub sigmas: Option<Vec<f64>>,
    pub weights: Option<Vec<f64>>,
}

impl ParsedOutput {
    pub fn outcomes(&self) -> usize {
        self.points.len()
    }

    /// Checks field presence against the kind and basic value domains.
    pub fn validate(&self) -> Result<()> {
        let m = self.points.len();
        if m == 0 {
            return invalid("parsed output has no points");
        }
        if self.kind.is_single() && m != 1 {
            return invalid(format!("{:?} carries exactly one point, got {m}", self.kind));
        }
        match (&self.sigmas, self.kind.is_probabilistic()) {
            (Some(s), true) if s.len() == m => {
                if let Some(bad) = s.iter().find(|v| !(**v > 0.0)) {
                    return invalid(format!("sigma must be positive, got {bad}"));
                }
            }
            (None, false) => {}
            _ => return invalid(format!("sigma block does not match kind {:?}", self.kind)),
        }
        match (&self.weights, self.kind.is_single()) {
            (Some(w), false) if w.len() == m => {
                let total: f64 = w.iter().sum();
                if (total - 1.0).abs() > 1e-6 {
                    return invalid(format!("weights sum to {total}, expected 1"));
                }
                if w.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return invalid("weights must lie in [0, 1]");
                }
            }
            (None, true) => {}
            _ => return invalid(format!("weight block does not match kind {:?}", self.kind)),
        }
        Ok(())
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    /// The prediction this output describes.
    pub fn to_prediction(&self) -> Result<Prediction> {
        let m = self.points.len();
        match &self.sigmas {
            Some(sigmas) => {
                let peaks = (0..m)
                    .map(|i| GaussianPeak { mu: self.points[i], sigma: sigmas[i], weight: self.weight(i) })
                    .collect();
                Ok(Prediction::Mixture { mixture: GmmPrediction::new(peaks)? })
            }
            None => Ok(Prediction::Points {
                points: (0..m).map(|i| WeightedPoint { point: self.points[i], weight: self.weight(i) }).collect(),
            }),
        }
    }
}

/// Loss components of one feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Weighted squared distance, degrees².
    pub spatial: f64,
    /// Weighted negative log-likelihood, nats; `None` for geospatial kinds.
    pub probabilistic: Option<f64>,
    pub total: f64,
}

fn expect_kind(out: &ParsedOutput, kind: HeadKind) -> Result<()> {
    if out.kind != kind {
        return invalid(format!("expected {kind:?} output, got {:?}", out.kind));
    }
    out.validate()
}

/// Negative log-likelihood of a point at squared distance `d2` under a
/// spherical Gaussian with covariance scalar `sigma`.
#[inline]
pub fn nllh(d2: f64, sigma: f64) -> f64 {
    d2 / (2.0 * sigma) + (2.0 * PI * sigma).ln()
}

fn weighted_terms(label: &GeoPoint, out: &ParsedOutput) -> (f64, Option<f64>) {
    let mut spatial = 0.0;
    let mut prob = out.sigmas.as_ref().map(|_| 0.0);
    for (i, point) in out.points.iter().enumerate() {
        let w = out.weight(i);
        let d2 = label.sq_dist(point);
        spatial += w * d2;
        if let (Some(acc), Some(sigmas)) = (prob.as_mut(), out.sigmas.as_ref()) {
            *acc += w * nllh(d2, sigmas[i]);
        }
    }
    (spatial, prob)
}

pub fn loss_gsop(label: &GeoPoint, out: &ParsedOutput) -> Result<LossBreakdown> {
    expect_kind(out, HeadKind::Gsop)?;
    let (spatial, _) = weighted_terms(label, out);
    Ok(LossBreakdown { spatial, probabilistic: None, total: spatial })
}

pub fn loss_gmop(label: &GeoPoint, out: &ParsedOutput) -> Result<LossBreakdown> {
    expect_kind(out, HeadKind::Gmop)?;
    let (spatial, _) = weighted_terms(label, out);
    Ok(LossBreakdown { spatial, probabilistic: None, total: spatial })
}

pub fn loss_psop(label: &GeoPoint, out: &ParsedOutput) -> Result<LossBreakdown> {
    expect_kind(out, HeadKind::Psop)?;
    probabilistic_loss(label, out, LossCombination::Average)
}

pub fn loss_pmop(label: &GeoPoint, out: &ParsedOutput) -> Result<LossBreakdown> {
    expect_kind(out, HeadKind::Pmop)?;
    probabilistic_loss(label, out, LossCombination::Average)
}

fn probabilistic_loss(label: &GeoPoint, out: &ParsedOutput, combination: LossCombination) -> Result<LossBreakdown> {
    let (spatial, prob) = weighted_terms(label, out);
    let prob = prob.expect("validated probabilistic output");
    Ok(LossBreakdown { spatial, probabilistic: Some(prob), total: combination.combine(spatial, prob) })
}

/// Per-feature loss under the default average combination.
pub fn per_feature_loss(label: &GeoPoint, out: &ParsedOutput) -> Result<LossBreakdown> {
    per_feature_loss_with(label, out, LossCombination::Average)
}

/// Per-feature loss with an explicit spatial/probabilistic combination.
/// Geospatial kinds ignore `combination`.
pub fn per_feature_loss_with(
    label: &GeoPoint,
    out: &ParsedOutput,
    combination: LossCombination,
) -> Result<LossBreakdown> {
    match out.kind {
        HeadKind::Gsop => loss_gsop(label, out),
        HeadKind::Gmop => loss_gmop(label, out),
        HeadKind::Psop | HeadKind::Pmop => {
            out.validate()?;
            probabilistic_loss(label, out, combination)
        }
    }
}

/// Mean of the per-feature totals of one tweet.
pub fn total_loss(features: &[LossBreakdown]) -> Result<f64> {
    if features.is_empty() {
        return invalid("total loss needs at least one feature");
    }
    Ok(features.iter().map(|f| f.total).sum::<f64>() / features.len() as f64)
}

/// Mean of per-tweet totals, reduced left to right.
pub fn batch_loss(per_tweet: &[f64]) -> Result<f64> {
    if per_tweet.is_empty() {
        return invalid("batch loss needs at least one tweet");
    }
    Ok(per_tweet.iter().sum::<f64>() / per_tweet.len() as f64)
}

/// Everything [`loss_gradient`] needs besides the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossSpec {
    pub kind: HeadKind,
    pub outcomes: usize,
    pub activation: CovActivation,
    pub combination: LossCombination,
}

impl LossSpec {
    pub fn new(kind: HeadKind, outcomes: usize) -> Self {
        Self { kind, outcomes, activation: CovActivation::default(), combination: LossCombination::default() }
    }
}

/// Gradient of the per-feature total loss with respect to raw outputs.
pub fn loss_gradient(label: &GeoPoint, raw: &[f64], spec: LossSpec) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; raw.len()];
    loss_and_gradient(label, raw, spec, &mut grad)?;
    Ok(grad)
}

/// Computes the per-feature loss and writes its raw-output gradient into
/// `grad` (overwritten, same length as `raw`).
pub fn loss_and_gradient(label: &GeoPoint, raw: &[f64], spec: LossSpec, grad: &mut [f64]) -> Result<LossBreakdown> {
    let expected = output_size(spec.kind, spec.outcomes)?;
    if raw.len() != expected || grad.len() != expected {
        return invalid(format!(
            "raw output has length {} (gradient buffer {}), expected {expected}",
            raw.len(),
            grad.len()
        ));
    }
    let layout = OutputLayout::new(spec.kind, spec.outcomes);
    let m = spec.outcomes;
    let probabilistic = spec.kind.is_probabilistic();
    let (a, b) = if probabilistic { spec.combination.coefficients() } else { (1.0, 0.0) };

    let weights = match &layout.weights {
        Some(range) => gmm::softmax(&raw[range.clone()])?,
        None => vec![1.0],
    };

    let mut spatial = 0.0;
    let mut prob = 0.0;
    // per-peak combined term T_i = a·D_i² + b·P_i
    let mut terms = vec![0.0; m];
    for i in 0..m {
        let mu = GeoPoint::raw(raw[2 * i], raw[2 * i + 1]);
        let dlon = mu.lon - label.lon;
        let dlat = mu.lat - label.lat;
        let d2 = dlon * dlon + dlat * dlat;
        let w = weights[i];

        let mut point_scale = 2.0 * a;
        let mut term = a * d2;
        if let Some(cov) = layout.covariances.as_ref() {
            let c = raw[cov.start + i];
            let sigma = spec.activation.apply(c);
            if !(sigma > 0.0) {
                return invalid(format!("covariance activation produced sigma {sigma}"));
            }
            let p = nllh(d2, sigma);
            prob += w * p;
            term += b * p;
            point_scale += b / sigma;
            // d/dσ of P = -D²/(2σ²) + 1/σ; dσ/dc = sigmoid(c)
            grad[cov.start + i] = w * b * (1.0 / sigma - d2 / (2.0 * sigma * sigma)) * gmm::sigmoid(c);
        }
        spatial += w * d2;
        terms[i] = term;
        grad[2 * i] = w * point_scale * dlon;
        grad[2 * i + 1] = w * point_scale * dlat;
    }

    let total: f64 = weights.iter().zip(&terms).map(|(w, t)| w * t).sum();
    if let Some(range) = layout.weights {
        for (i, g) in grad[range].iter_mut().enumerate() {
            *g = weights[i] * (terms[i] - total);
        }
    }

    Ok(LossBreakdown { spatial, probabilistic: probabilistic.then_some(prob), total })
}
