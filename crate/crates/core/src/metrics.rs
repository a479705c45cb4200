//! Evaluation metrics.
//!
//! Distances are great-circle kilometers. Multi-peak predictions are scored
//! as the weight-combination of per-peak scores. Aggregate means and
//! medians are computed over sorted per-sample values, so a report does not
//! depend on dataset order.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::features::{compose_feature, FeatureSet, TweetRecord};
use crate::geo::GeoPoint;
use crate::gmm::{GmmPrediction, Prediction};
use crate::head::ModelBundle;

pub const ACC_RADIUS_KM: f64 = 161.0;
pub const DEFAULT_ALPHA: f64 = 0.95;
pub const DEFAULT_CAE_SAMPLES: usize = 100;

/// Simple accuracy error: `Σ W_i · Hav(y, μ_i)`.
pub fn sae(label: &GeoPoint, pred: &Prediction) -> f64 {
    pred.weighted_points().iter().map(|p| p.weight * label.haversine(&p.point)).sum()
}

/// Percentage of errors at most 161 km.
pub fn acc_at_161(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return invalid("accuracy of an empty error list");
    }
    let hits = errors.iter().filter(|e| **e <= ACC_RADIUS_KM).count();
    Ok(100.0 * hits as f64 / errors.len() as f64)
}

/// Quantile of the χ² distribution with 2 degrees of freedom at
/// probability `alpha`: `-2 ln(1 - alpha)`.
pub fn chi2_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return invalid(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    Ok(-2.0 * (-alpha).ln_1p())
}

/// Median; the mean of the middle pair for even lengths, NaN when empty.
pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn sorted_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

fn wrap_sample(lon: f64, lat: f64) -> GeoPoint {
    // reflect over the poles, then wrap longitude into [-180, 180)
    let (mut lon, mut lat) = (lon, lat);
    if lat > 90.0 {
        lat = 180.0 - lat;
        lon += 180.0;
    } else if lat < -90.0 {
        lat = -180.0 - lat;
        lon += 180.0;
    }
    lon = (lon + 180.0).rem_euclid(360.0) - 180.0;
    GeoPoint::raw(lon, lat.clamp(-90.0, 90.0))
}

/// Comprehensive accuracy error by Monte Carlo: for each peak, the mean
/// great-circle distance from the label to `n_per_peak` draws from the
/// peak's Gaussian (in degree space), combined by weight.
pub fn cae_with_rng<R: Rng + ?Sized>(label: &GeoPoint, pred: &GmmPrediction, n_per_peak: usize, rng: &mut R) -> Result<f64> {
    if n_per_peak == 0 {
        return invalid("CAE needs at least one sample per peak");
    }
    let mut total = 0.0;
    for peak in pred.peaks() {
        let std = peak.sigma.sqrt();
        let mut sum = 0.0;
        for _ in 0..n_per_peak {
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            let s = wrap_sample(peak.mu.lon + std * dx, peak.mu.lat + std * dy);
            sum += label.haversine(&s);
        }
        total += peak.weight * sum / n_per_peak as f64;
    }
    Ok(total)
}

/// Per-sample RNG seed derived from the global seed and a sample key.
pub fn sample_seed(seed: u64, key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// [`cae_with_rng`] with a stream seeded from `(seed, key)`.
pub fn cae(label: &GeoPoint, pred: &Prediction, n_per_peak: usize, seed: u64, key: &str) -> Result<f64> {
    let Some(mixture) = pred.mixture() else {
        return invalid("CAE needs a probabilistic prediction");
    };
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, key));
    cae_with_rng(label, mixture, n_per_peak, &mut rng)
}

/// Prediction region area in degrees²: `π · q(α) · Σ W_i σ_i`.
pub fn pra(pred: &GmmPrediction, alpha: f64) -> Result<f64> {
    let q = chi2_quantile(alpha)?;
    Ok(std::f64::consts::PI * q * pred.peaks().iter().map(|p| p.weight * p.sigma).sum::<f64>())
}

/// Membership test for the prediction region.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovMode {
    /// `D² / σ ≤ q`.
    #[default]
    MahalanobisSquared,
    /// `D / σ ≤ q`.
    StrictPaper,
}

/// How per-peak memberships combine for one sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovAggregation {
    /// `Σ W_i · 1[label inside peak i]`.
    #[default]
    Weighted,
    /// 1 when any peak contains the label.
    AnyPeak,
}

/// Coverage score of one sample, in [0, 1].
pub fn coverage(label: &GeoPoint, pred: &GmmPrediction, q: f64, mode: CovMode, agg: CovAggregation) -> f64 {
    let inside = |p: &crate::gmm::GaussianPeak| {
        let d2 = label.sq_dist(&p.mu);
        match mode {
            CovMode::MahalanobisSquared => d2 / p.sigma <= q,
            CovMode::StrictPaper => d2.sqrt() / p.sigma <= q,
        }
    };
    match agg {
        CovAggregation::Weighted => pred.peaks().iter().filter(|p| inside(p)).map(|p| p.weight).sum::<f64>().min(1.0),
        CovAggregation::AnyPeak => {
            if pred.peaks().iter().any(inside) {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Mean coverage over a labeled set.
pub fn cov(labels: &[GeoPoint], preds: &[GmmPrediction], alpha: f64, mode: CovMode, agg: CovAggregation) -> Result<f64> {
    if labels.len() != preds.len() {
        return invalid(format!("{} labels but {} predictions", labels.len(), preds.len()));
    }
    if labels.is_empty() {
        return invalid("coverage of an empty set");
    }
    let q = chi2_quantile(alpha)?;
    let mut scores: Vec<f64> = labels.iter().zip(preds).map(|(y, p)| coverage(y, p, q, mode, agg)).collect();
    Ok(sorted_mean(&mut scores))
}

/// Aggregate metrics. Probabilistic fields are `None` for geospatial heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mean_sae: f64,
    pub median_sae: f64,
    pub acc_at_161: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_cae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_cae: Option<f64>,
    /// Degrees².
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_pra: Option<f64>,
    /// Degrees².
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_pra: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cov: Option<f64>,
    pub n_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub alpha: f64,
    pub cov_mode: CovMode,
    pub cov_aggregation: CovAggregation,
    pub cae_samples: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            cov_mode: CovMode::default(),
            cov_aggregation: CovAggregation::default(),
            cae_samples: DEFAULT_CAE_SAMPLES,
            seed: 0,
        }
    }
}

/// Streaming metric accumulator.
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    opts: EvalOptions,
    q: f64,
    sae: Vec<f64>,
    cae: Vec<f64>,
    pra: Vec<f64>,
    cov: Vec<f64>,
    geospatial: usize,
}

impl MetricsAccumulator {
    pub fn new(opts: EvalOptions) -> Result<Self> {
        let q = chi2_quantile(opts.alpha)?;
        Ok(Self { opts, q, sae: Vec::new(), cae: Vec::new(), pra: Vec::new(), cov: Vec::new(), geospatial: 0 })
    }

    /// Adds one sample. `key` seeds its Monte Carlo stream.
    pub fn push(&mut self, key: &str, label: &GeoPoint, pred: &Prediction) -> Result<()> {
        self.sae.push(sae(label, pred));
        match pred.mixture() {
            Some(m) => {
                self.cae.push(cae(label, pred, self.opts.cae_samples, self.opts.seed, key)?);
                self.pra.push(pra(m, self.opts.alpha)?);
                self.cov.push(coverage(label, m, self.q, self.opts.cov_mode, self.opts.cov_aggregation));
            }
            None => self.geospatial += 1,
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sae.is_empty()
    }

    pub fn finish(mut self) -> Result<MetricsReport> {
        if self.sae.is_empty() {
            return invalid("no samples to evaluate");
        }
        let probabilistic = self.geospatial == 0;
        if !probabilistic && !self.cae.is_empty() {
            return invalid("cannot mix geospatial and probabilistic predictions in one report");
        }
        let stat = |v: &mut Vec<f64>| -> (Option<f64>, Option<f64>) {
            if probabilistic {
                (Some(sorted_mean(v)), Some(median(v)))
            } else {
                (None, None)
            }
        };
        let (mean_cae, median_cae) = stat(&mut self.cae);
        let (mean_pra, median_pra) = stat(&mut self.pra);
        let cov = probabilistic.then(|| sorted_mean(&mut self.cov));
        Ok(MetricsReport {
            acc_at_161: acc_at_161(&self.sae)?,
            mean_sae: sorted_mean(&mut self.sae),
            median_sae: median(&mut self.sae),
            mean_cae,
            median_cae,
            mean_pra,
            median_pra,
            cov,
            n_samples: self.sae.len(),
        })
    }
}

/// Metrics over `(key, label, prediction)` triples.
pub fn evaluate_predictions<'a, I>(items: I, opts: EvalOptions) -> Result<MetricsReport>
where
    I: IntoIterator<Item = (&'a str, &'a GeoPoint, &'a Prediction)>,
{
    let mut acc = MetricsAccumulator::new(opts)?;
    for (key, label, pred) in items {
        acc.push(key, label, pred)?;
    }
    acc.finish()
}

/// Predicts every labeled record from its `feature` text and scores it.
/// Grouped output keeps the first-seen order of group keys.
pub fn evaluate_grouped<F>(
    dataset: &[TweetRecord],
    bundle: &ModelBundle,
    feature: FeatureSet,
    opts: EvalOptions,
    group: F,
) -> Result<Vec<(String, MetricsReport)>>
where
    F: Fn(&TweetRecord) -> String,
{
    let mut groups: Vec<(String, MetricsAccumulator)> = Vec::new();
    for record in dataset {
        let Some(label) = record.label else {
            return invalid(format!("record {} has no label", record.tweet_id));
        };
        let text = compose_feature(record, feature);
        if text.is_empty() {
            log::warn!("record {} has an empty {feature} feature, skipped", record.tweet_id);
            continue;
        }
        let (pred, _) = crate::head::predict(&text, bundle)?.clamped();
        let key = group(record);
        let idx = match groups.iter().position(|(k, _)| *k == key) {
            Some(i) => i,
            None => {
                groups.push((key, MetricsAccumulator::new(opts)?));
                groups.len() - 1
            }
        };
        groups[idx].1.push(&record.tweet_id, &label, &pred)?;
    }
    if groups.is_empty() {
        return invalid("empty evaluation dataset");
    }
    groups.into_iter().map(|(k, acc)| Ok((k, acc.finish()?))).collect()
}

pub fn evaluate(dataset: &[TweetRecord], bundle: &ModelBundle, feature: FeatureSet, opts: EvalOptions) -> Result<MetricsReport> {
    let mut out = evaluate_grouped(dataset, bundle, feature, opts, |_| String::new())?;
    Ok(out.remove(0).1)
}

fn cell(v: Option<f64>, precision: usize) -> String {
    match v {
        Some(x) => format!("{x:.precision$}"),
        None => "-".into(),
    }
}

/// Fixed-width table, one row per labeled report.
pub fn format_table(rows: &[(String, MetricsReport)]) -> String {
    let headers =
        ["", "Mean SAE km", "Med SAE km", "Acc@161 %", "Mean CAE km", "Med CAE km", "Mean PRA deg²", "Med PRA deg²", "COV", "N"];
    let mut lines: Vec<Vec<String>> = vec![headers.iter().map(|h| h.to_string()).collect()];
    for (name, r) in rows {
        lines.push(vec![
            name.clone(),
            format!("{:.1}", r.mean_sae),
            format!("{:.1}", r.median_sae),
            format!("{:.1}", r.acc_at_161),
            cell(r.mean_cae, 1),
            cell(r.median_cae, 1),
            cell(r.mean_pra, 2),
            cell(r.median_pra, 2),
            cell(r.cov, 3),
            r.n_samples.to_string(),
        ]);
    }
    let widths: Vec<usize> =
        (0..headers.len()).map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for line in &lines {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{GaussianPeak, SIGMA_FLOOR};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn p(lon: f64, lat: f64) -> GeoPoint {
        GeoPoint::new(lon, lat).unwrap()
    }

    fn mixture(peaks: &[(f64, f64, f64, f64)]) -> GmmPrediction {
        GmmPrediction::new(peaks.iter().map(|&(lon, lat, sigma, weight)| GaussianPeak { mu: p(lon, lat), sigma, weight }).collect())
            .unwrap()
    }

    fn mix_pred(peaks: &[(f64, f64, f64, f64)]) -> Prediction {
        Prediction::Mixture { mixture: mixture(peaks) }
    }

    #[test]
    fn sae_examples() {
        let y = p(10.0, 50.0);
        assert_eq!(sae(&y, &mix_pred(&[(10.0, 50.0, 1.0, 1.0)])), 0.0);
        // peaks at known great-circle distances along the equator
        let origin = p(0.0, 0.0);
        let deg = |km: f64| (km / crate::geo::EARTH_RADIUS_KM).to_degrees();
        let two = mix_pred(&[(0.0, 0.0, 1.0, 0.5), (deg(200.0), 0.0, 1.0, 0.5)]);
        assert_abs_diff_eq!(sae(&origin, &two), 100.0, epsilon = 1e-9);
        let skew = mix_pred(&[(deg(10.0), 0.0, 1.0, 0.9), (deg(1000.0), 0.0, 1.0, 0.1)]);
        assert_abs_diff_eq!(sae(&origin, &skew), 109.0, epsilon = 1e-9);
    }

    #[test]
    fn acc_examples() {
        assert_abs_diff_eq!(acc_at_161(&[10.0, 200.0, 160.0]).unwrap(), 66.6667, epsilon = 1e-3);
        assert_eq!(acc_at_161(&[0.0; 4]).unwrap(), 100.0);
        assert_eq!(acc_at_161(&[161.0]).unwrap(), 100.0);
        assert!(acc_at_161(&[]).is_err());
    }

    #[test]
    fn pra_examples() {
        let q = chi2_quantile(0.95).unwrap();
        assert_abs_diff_eq!(q, 5.991465, epsilon = 1e-6);
        assert_abs_diff_eq!(pra(&mixture(&[(0.0, 0.0, 1.0, 1.0)]), 0.95).unwrap(), 18.822, epsilon = 1e-3);
        assert_abs_diff_eq!(pra(&mixture(&[(0.0, 0.0, SIGMA_FLOOR, 1.0)]), 0.95).unwrap(), q / 2.0, epsilon = 1e-12);
        let a = pra(&mixture(&[(0.0, 0.0, 0.7, 0.3), (5.0, 5.0, 2.0, 0.7)]), 0.9).unwrap();
        let b = pra(&mixture(&[(0.0, 0.0, 1.4, 0.3), (5.0, 5.0, 4.0, 0.7)]), 0.9).unwrap();
        assert_abs_diff_eq!(b, 2.0 * a, epsilon = 1e-12);
        assert!(chi2_quantile(0.0).is_err());
        assert!(chi2_quantile(1.0).is_err());
    }

    #[test]
    fn cov_examples() {
        let q = chi2_quantile(0.95).unwrap();
        let y = p(0.0, 0.0);
        let m = CovMode::default();
        let a = CovAggregation::default();
        assert_eq!(coverage(&y, &mixture(&[(0.0, 0.0, 1.0, 1.0)]), q, m, a), 1.0);
        // D² / σ exactly q
        let sigma = 2.0;
        let d = (q * sigma).sqrt();
        let at_edge = mixture(&[(d, 0.0, sigma, 1.0)]);
        assert_eq!(coverage(&y, &at_edge, q, m, a), 1.0);
        assert_eq!(coverage(&y, &mixture(&[(d * 1.001, 0.0, sigma, 1.0)]), q, m, a), 0.0);
        let two = mixture(&[(0.0, 0.0, 1.0, 0.3), (50.0, 0.0, 1.0, 0.7)]);
        assert_abs_diff_eq!(coverage(&y, &two, q, m, CovAggregation::Weighted), 0.3, epsilon = 1e-12);
        assert_eq!(coverage(&y, &two, q, m, CovAggregation::AnyPeak), 1.0);
        // the strict reading compares D rather than D²
        let strict = mixture(&[(3.0, 0.0, 1.0, 1.0)]);
        assert_eq!(coverage(&y, &strict, q, CovMode::StrictPaper, a), 1.0);
        assert_eq!(coverage(&y, &strict, q, CovMode::MahalanobisSquared, a), 0.0);
    }

    #[test]
    fn cov_calibrated_on_own_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut labels = Vec::new();
        let mut preds = Vec::new();
        for _ in 0..10_000 {
            let sigma: f64 = rng.random_range(0.2..4.0);
            let mu = p(rng.random_range(-150.0..150.0), rng.random_range(-60.0..60.0));
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            labels.push(GeoPoint::raw(mu.lon + sigma.sqrt() * dx, mu.lat + sigma.sqrt() * dy));
            preds.push(GmmPrediction::single(mu, sigma).unwrap());
        }
        let c = cov(&labels, &preds, 0.95, CovMode::default(), CovAggregation::default()).unwrap();
        assert!((c - 0.95).abs() < 0.02, "coverage {c}");
    }

    #[test]
    fn cae_examples() {
        let y = p(10.0, 45.0);
        let tight = mix_pred(&[(10.0, 45.0, SIGMA_FLOOR, 1.0)]);
        for seed in 0..10 {
            let c = cae(&y, &tight, 100, seed, "t").unwrap();
            assert!(c > 0.0 && c < 60.0, "seed {seed}: {c}");
        }
        assert!(cae(&y, &Prediction::Points { points: vec![] }, 100, 0, "t").is_err());

        // two identical peaks behave as one
        let single = mix_pred(&[(12.0, 44.0, 1.0, 1.0)]);
        let split = mix_pred(&[(12.0, 44.0, 1.0, 0.3), (12.0, 44.0, 1.0, 0.7)]);
        let runs = 200;
        let (mut a, mut b, mut a2) = (0.0, 0.0, 0.0);
        for s in 0..runs {
            let x = cae(&y, &single, 100, s, "k").unwrap();
            a += x;
            a2 += x * x;
            b += cae(&y, &split, 100, s + 10_000, "k").unwrap();
        }
        let (ma, mb) = (a / runs as f64, b / runs as f64);
        let sd = (a2 / runs as f64 - ma * ma).sqrt();
        assert!((ma - mb).abs() < 3.0 * sd, "{ma} vs {mb} (sd {sd})");
    }

    #[test]
    fn cae_is_monotone_in_spread() {
        let y = p(0.0, 0.0);
        let mut small = 0.0;
        let mut large = 0.0;
        for s in 0..50 {
            small += cae(&y, &mix_pred(&[(1.0, 1.0, 0.5, 1.0)]), 100, s, "m").unwrap();
            large += cae(&y, &mix_pred(&[(1.0, 1.0, 4.0, 1.0)]), 100, s, "m").unwrap();
        }
        assert!(small < large);
    }

    #[test]
    fn wrap_keeps_samples_valid() {
        assert!(wrap_sample(185.0, 95.0).in_range());
        assert!(wrap_sample(-181.0, -93.0).in_range());
        let w = wrap_sample(179.5, 91.0);
        assert_abs_diff_eq!(w.lat, 89.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.lon, -0.5, epsilon = 1e-12);
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&mut []).is_nan());
    }

    #[test]
    fn geospatial_reports_have_no_probabilistic_fields() {
        let y = p(0.0, 0.0);
        let pred = Prediction::Points { points: vec![crate::gmm::WeightedPoint { point: p(1.0, 0.0), weight: 1.0 }] };
        let r = evaluate_predictions([("a", &y, &pred)], EvalOptions::default()).unwrap();
        assert!(r.mean_cae.is_none() && r.cov.is_none() && r.mean_pra.is_none());
        let json = serde_json::to_value(&r).unwrap();
        assert!(json.get("cov").is_none());
        let table = format_table(&[("GMOP".into(), r)]);
        assert!(table.lines().nth(1).unwrap().contains(" -"));
    }

    fn arb_case() -> impl Strategy<Value = (GeoPoint, Prediction, String)> {
        (
            -170.0..170.0f64,
            -80.0..80.0f64,
            proptest::collection::vec((-170.0..170.0f64, -80.0..80.0f64, 0.2..5.0f64, 0.1..1.0f64), 1..4),
            "[a-z0-9]{4}",
        )
            .prop_map(|(lon, lat, peaks, id)| {
                let total: f64 = peaks.iter().map(|p| p.3).sum();
                let peaks: Vec<_> = peaks.into_iter().map(|(a, b, s, w)| (a, b, s, w / total)).collect();
                (GeoPoint::raw(lon, lat), mix_pred(&peaks), id)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn reports_are_permutation_invariant(cases in proptest::collection::vec(arb_case(), 2..8), shift in 1usize..7) {
            let opts = EvalOptions { cae_samples: 20, ..EvalOptions::default() };
            let forward = evaluate_predictions(cases.iter().map(|(y, p, k)| (k.as_str(), y, p)), opts).unwrap();
            let mut rotated = cases.clone();
            let n = rotated.len();
            rotated.rotate_left(shift % n);
            let other = evaluate_predictions(rotated.iter().map(|(y, p, k)| (k.as_str(), y, p)), opts).unwrap();
            prop_assert_eq!(forward, other);
        }

        #[test]
        fn cov_monotone_in_alpha(cases in proptest::collection::vec(arb_case(), 1..8), a in 0.05..0.9f64, da in 0.0..0.09f64) {
            let labels: Vec<GeoPoint> = cases.iter().map(|c| c.0).collect();
            let preds: Vec<GmmPrediction> = cases.iter().map(|c| c.1.mixture().unwrap().clone()).collect();
            for mode in [CovMode::MahalanobisSquared, CovMode::StrictPaper] {
                let lo = cov(&labels, &preds, a, mode, CovAggregation::Weighted).unwrap();
                let hi = cov(&labels, &preds, a + da, mode, CovAggregation::Weighted).unwrap();
                prop_assert!(lo <= hi);
            }
        }

        #[test]
        fn pra_linear_in_sigma(case in arb_case(), k in 0.1..10.0f64) {
            let m = case.1.mixture().unwrap();
            let scaled = GmmPrediction::new(m.peaks().iter().map(|p| GaussianPeak { sigma: p.sigma * k, ..*p }).collect()).unwrap();
            let a = pra(m, 0.95).unwrap();
            prop_assert!((pra(&scaled, 0.95).unwrap() - k * a).abs() <= 1e-9 * (1.0 + k * a));
        }

        #[test]
        fn cae_non_negative(case in arb_case(), seed in 0u64..1000) {
            prop_assert!(cae(&case.0, &case.1, 10, seed, &case.2).unwrap() >= 0.0);
        }
    }
}
