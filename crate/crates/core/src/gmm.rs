//! Spherical Gaussian mixture math.
//!
//! `sigma` is the scalar of the spherical covariance `sigma * I` and is
//! measured in degrees², because distances inside the density are planar
//! degree distances.

use std::cmp::Ordering;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geo::GeoPoint;

/// Lower bound added to the covariance activation, `1 / (2π)`.
///
/// At this bound the height of a 2-D spherical Gaussian is exactly 1, so a
/// density never exceeds 1 and its negative log never drops below 0.
pub const SIGMA_FLOOR: f64 = 1.0 / (2.0 * PI);

const SOFTPLUS_BRANCH: f64 = 30.0;

/// `log(1 + e^x)`, overflow-safe.
pub fn softplus(x: f64) -> f64 {
    if x > SOFTPLUS_BRANCH {
        x + (-x).exp().ln_1p()
    } else if x < -SOFTPLUS_BRANCH {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`], the logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// SoftPlus shifted by [`SIGMA_FLOOR`]; always strictly above `1 / (2π)`.
pub fn softplus_lb(x: f64) -> f64 {
    softplus(x) + SIGMA_FLOOR
}

/// Activation applied to raw covariance outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovActivation {
    /// `softplus(c) + 1/(2π)`.
    #[default]
    LowerBounded,
    /// Plain `softplus(c)`; densities can exceed 1.
    Unlimited,
}

impl CovActivation {
    pub fn apply(self, raw: f64) -> f64 {
        match self {
            CovActivation::LowerBounded => softplus_lb(raw),
            CovActivation::Unlimited => softplus(raw),
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return invalid("softmax of an empty vector");
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return invalid("softmax input must be finite");
    }
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// One weighted spherical Gaussian component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPeak {
    pub mu: GeoPoint,
    /// Spherical covariance scalar, degrees².
    pub sigma: f64,
    pub weight: f64,
}

/// A mixture of spherical Gaussians, sorted by descending weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmPrediction {
    peaks: Vec<GaussianPeak>,
}

/// Descending weight, then ascending longitude, then ascending latitude.
pub(crate) fn peak_order(a: &GaussianPeak, b: &GaussianPeak) -> Ordering {
    b.weight
        .total_cmp(&a.weight)
        .then(a.mu.lon.total_cmp(&b.mu.lon))
        .then(a.mu.lat.total_cmp(&b.mu.lat))
}

impl GmmPrediction {
    /// Validates the peaks and sorts them by descending weight.
    pub fn new(mut peaks: Vec<GaussianPeak>) -> Result<Self> {
        if peaks.is_empty() {
            return invalid("a mixture needs at least one peak");
        }
        for peak in &peaks {
            if !peak.mu.is_finite() {
                return invalid(format!("non-finite peak mean {:?}", peak.mu));
            }
            if !(peak.sigma > 0.0 && peak.sigma.is_finite()) {
                return invalid(format!("peak sigma must be positive, got {}", peak.sigma));
            }
            if !(0.0..=1.0).contains(&peak.weight) {
                return invalid(format!("peak weight {} outside [0, 1]", peak.weight));
            }
        }
        let total: f64 = peaks.iter().map(|p| p.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return invalid(format!("peak weights sum to {total}, expected 1"));
        }
        peaks.sort_by(peak_order);
        Ok(Self { peaks })
    }

    /// Single-peak mixture with weight 1.
    pub fn single(mu: GeoPoint, sigma: f64) -> Result<Self> {
        Self::new(vec![GaussianPeak { mu, sigma, weight: 1.0 }])
    }

    pub fn peaks(&self) -> &[GaussianPeak] {
        &self.peaks
    }

    pub fn len(&self) -> usize {
        self.peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }

    pub fn top(&self) -> &GaussianPeak {
        &self.peaks[0]
    }
}

/// A point with its mixture weight, the output of geospatial heads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedPoint {
    pub point: GeoPoint,
    pub weight: f64,
}

/// What a head predicts for one input: weighted points for geospatial
/// kinds, a Gaussian mixture for probabilistic kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Prediction {
    Points { points: Vec<WeightedPoint> },
    Mixture { mixture: GmmPrediction },
}

impl Prediction {
    /// Points with their weights, in descending weight order.
    pub fn weighted_points(&self) -> Vec<WeightedPoint> {
        match self {
            Prediction::Points { points } => points.clone(),
            Prediction::Mixture { mixture } => mixture
                .peaks()
                .iter()
                .map(|p| WeightedPoint { point: p.mu, weight: p.weight })
                .collect(),
        }
    }

    pub fn mixture(&self) -> Option<&GmmPrediction> {
        match self {
            Prediction::Mixture { mixture } => Some(mixture),
            Prediction::Points { .. } => None,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Prediction::Points { points } => points.len(),
            Prediction::Mixture { mixture } => mixture.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copy with every point clamped into WGS84 ranges, plus how many
    /// points had to move.
    pub fn clamped(&self) -> (Prediction, usize) {
        let mut moved = 0;
        let mut fix = |p: &GeoPoint| {
            if !p.in_range() {
                moved += 1;
            }
            p.clamped()
        };
        let out = match self {
            Prediction::Points { points } => Prediction::Points {
                points: points.iter().map(|w| WeightedPoint { point: fix(&w.point), weight: w.weight }).collect(),
            },
            Prediction::Mixture { mixture } => Prediction::Mixture {
                mixture: GmmPrediction {
                    peaks: mixture.peaks.iter().map(|p| GaussianPeak { mu: fix(&p.mu), ..*p }).collect(),
                },
            },
        };
        (out, moved)
    }
}

/// Density of a 2-D spherical Gaussian, `e^{-D²/(2σ)} / (2πσ)`.
pub fn gaussian_pdf(y: &GeoPoint, peak: &GaussianPeak) -> Result<f64> {
    if !(peak.sigma > 0.0) {
        return invalid(format!("sigma must be positive, got {}", peak.sigma));
    }
    Ok(pdf_unchecked(y, &peak.mu, peak.sigma))
}

#[inline]
pub(crate) fn pdf_unchecked(y: &GeoPoint, mu: &GeoPoint, sigma: f64) -> f64 {
    (-y.sq_dist(mu) / (2.0 * sigma)).exp() / (2.0 * PI * sigma)
}

/// Mixture density, `Σ w · N(y | μ, σI)`.
pub fn gmm_density(y: &GeoPoint, pred: &GmmPrediction) -> Result<f64> {
    pred.peaks.iter().try_fold(0.0, |acc, peak| Ok(acc + peak.weight * gaussian_pdf(y, peak)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn peak(lon: f64, lat: f64, sigma: f64, weight: f64) -> GaussianPeak {
        GaussianPeak { mu: GeoPoint::raw(lon, lat), sigma, weight }
    }

    #[test]
    fn softplus_examples() {
        assert_abs_diff_eq!(softplus(0.0), std::f64::consts::LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(softplus(1000.0), 1000.0, epsilon = 1e-6);
        let tiny = softplus(-1000.0);
        assert!(tiny >= 0.0);
        assert_abs_diff_eq!(tiny, 0.0, epsilon = 1e-12);
        // continuity across the overflow branches
        assert_abs_diff_eq!(softplus(30.0), softplus(30.0 + 1e-12), epsilon = 1e-9);
        assert_abs_diff_eq!(softplus(-30.0), softplus(-30.0 - 1e-12), epsilon = 1e-15);
    }

    #[test]
    fn softplus_lb_examples() {
        assert_abs_diff_eq!(softplus_lb(-1000.0), 0.1591549, epsilon = 1e-7);
        assert_abs_diff_eq!(softplus_lb(-1000.0), SIGMA_FLOOR, epsilon = 1e-9);
        assert_abs_diff_eq!(softplus_lb(0.0), 0.852302, epsilon = 1e-6);
        assert_abs_diff_eq!(softplus_lb(10.0), 10.159200, epsilon = 1e-4);
    }

    #[test]
    fn softmax_examples() {
        let w = softmax(&[0.0, 0.0]).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
        let w = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert_abs_diff_eq!(w[0], 2.0 / 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(w[1], 1.0 / 3.0, epsilon = 1e-9);
        let w = softmax(&[1000.0, 0.0]).unwrap();
        assert_abs_diff_eq!(w[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 0.0, epsilon = 1e-12);
        assert!(softmax(&[]).is_err());
        assert!(softmax(&[f64::NAN]).is_err());
    }

    #[test]
    fn pdf_examples() {
        let y = GeoPoint::raw(0.0, 0.0);
        assert_abs_diff_eq!(gaussian_pdf(&y, &peak(0.0, 0.0, SIGMA_FLOOR, 1.0)).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            gaussian_pdf(&y, &peak(1.0, 0.0, SIGMA_FLOOR, 1.0)).unwrap(),
            0.0432139,
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(gaussian_pdf(&y, &peak(0.0, 0.0, 1.0, 1.0)).unwrap(), 0.1591549, epsilon = 1e-7);
        assert!(gaussian_pdf(&y, &peak(0.0, 0.0, 0.0, 1.0)).is_err());
        assert!(gaussian_pdf(&y, &peak(0.0, 0.0, -1.0, 1.0)).is_err());
    }

    #[test]
    fn mixture_density_examples() {
        let y = GeoPoint::raw(0.0, 0.0);
        let single = peak(2.0, 1.0, 0.7, 1.0);
        let pred = GmmPrediction::new(vec![single]).unwrap();
        assert_eq!(gmm_density(&y, &pred).unwrap(), gaussian_pdf(&y, &single).unwrap());

        let twin = GmmPrediction::new(vec![peak(2.0, 1.0, 0.7, 0.5), peak(2.0, 1.0, 0.7, 0.5)]).unwrap();
        assert_abs_diff_eq!(gmm_density(&y, &twin).unwrap(), gaussian_pdf(&y, &single).unwrap(), epsilon = 1e-15);

        let two = GmmPrediction::new(vec![peak(0.0, 0.0, SIGMA_FLOOR, 0.5), peak(1.0, 0.0, SIGMA_FLOOR, 0.5)]).unwrap();
        assert_abs_diff_eq!(gmm_density(&y, &two).unwrap(), 0.521607, epsilon = 1e-6);
    }

    #[test]
    fn prediction_sorted_and_validated() {
        let pred = GmmPrediction::new(vec![
            peak(5.0, 0.0, 1.0, 0.2),
            peak(1.0, 0.0, 1.0, 0.4),
            peak(-1.0, 2.0, 1.0, 0.4),
        ])
        .unwrap();
        let lons: Vec<f64> = pred.peaks().iter().map(|p| p.mu.lon).collect();
        assert_eq!(lons, vec![-1.0, 1.0, 5.0]);
        assert!(GmmPrediction::new(vec![]).is_err());
        assert!(GmmPrediction::new(vec![peak(0.0, 0.0, 1.0, 0.7)]).is_err());
        assert!(GmmPrediction::new(vec![peak(0.0, 0.0, 0.0, 1.0)]).is_err());
    }

    proptest! {
        #[test]
        fn lower_bound_offset_is_exact(c in -100.0..100.0f64) {
            prop_assert_eq!(softplus_lb(c), softplus(c) + SIGMA_FLOOR);
            prop_assert!(softplus_lb(c) >= SIGMA_FLOOR);
        }

        #[test]
        fn pdf_bounded_under_floor(
            dlon in -50.0..50.0f64, dlat in -50.0..50.0f64, c in -50.0..50.0f64
        ) {
            let d = gaussian_pdf(&GeoPoint::raw(dlon, dlat), &peak(0.0, 0.0, softplus_lb(c), 1.0)).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
        }

        #[test]
        fn softmax_shift_invariant(raw in proptest::collection::vec(-20.0..20.0f64, 1..8), shift in -50.0..50.0f64) {
            let a = softmax(&raw).unwrap();
            let shifted: Vec<f64> = raw.iter().map(|v| v + shift).collect();
            let b = softmax(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn density_monotone_in_distance(d1 in 0.0..10.0f64, extra in 0.0..10.0f64, sigma in 0.01..10.0f64) {
            let pred = GmmPrediction::single(GeoPoint::raw(0.0, 0.0), sigma).unwrap();
            let near = gmm_density(&GeoPoint::raw(d1, 0.0), &pred).unwrap();
            let far = gmm_density(&GeoPoint::raw(d1 + extra, 0.0), &pred).unwrap();
            prop_assert!(far <= near);
        }
    }
}
