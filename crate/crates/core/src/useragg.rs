//! Per-user home-location estimation from a user's per-tweet mixtures.
//!
//! The summary grid is the Cartesian product of a 10° ground grid and every
//! peak coordinate. Each cell is scored with the mean mixture density over
//! the user's tweets. Local maxima under a 10×10 index window are ranked by
//! score, and the top K become the estimate, weighted by a softmax of their
//! scores.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, GeoError, Result};
use crate::geo::GeoPoint;
use crate::gmm::{pdf_unchecked, GmmPrediction};

pub const GRID_STEP_DEG: f64 = 10.0;
/// Window offsets relative to a cell: `[i - 4, i + 5]`.
pub const WINDOW_BEFORE: usize = 4;
pub const WINDOW_AFTER: usize = 5;

/// Summary scores over the combined coordinate grid, indexed `z[lon][lat]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryGrid {
    pub lon_values: Vec<f64>,
    pub lat_values: Vec<f64>,
    pub z: Vec<Vec<f64>>,
}

impl SummaryGrid {
    pub fn point(&self, i: usize, j: usize) -> GeoPoint {
        GeoPoint::raw(self.lon_values[i], self.lat_values[j])
    }
}

/// A user's estimated locations, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserEstimate {
    pub points: Vec<GeoPoint>,
    /// Summary scores of the points, non-increasing.
    pub scores: Vec<f64>,
    /// Softmax of the scores; absent when a single point is returned.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

fn sorted_unique(mut values: Vec<f64>) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    values.dedup();
    values
}

/// Ground-grid coordinates united with every peak coordinate.
pub fn grid_axes(preds: &[GmmPrediction]) -> Result<(Vec<f64>, Vec<f64>)> {
    if preds.is_empty() {
        return invalid("a user estimate needs at least one prediction");
    }
    let mut lons: Vec<f64> = (0..36).map(|k| -180.0 + GRID_STEP_DEG * k as f64).collect();
    let mut lats: Vec<f64> = (0..19).map(|k| -90.0 + GRID_STEP_DEG * k as f64).collect();
    for peak in preds.iter().flat_map(|p| p.peaks()) {
        lons.push(peak.mu.lon);
        lats.push(peak.mu.lat);
    }
    Ok((sorted_unique(lons), sorted_unique(lats)))
}

// canonical order so summation order does not depend on input order
fn canonical(preds: &[GmmPrediction]) -> Vec<&GmmPrediction> {
    let mut sorted: Vec<&GmmPrediction> = preds.iter().collect();
    sorted.sort_by(|a, b| {
        let key = |p: &GmmPrediction| p.peaks().iter().flat_map(|k| [k.weight, k.mu.lon, k.mu.lat, k.sigma]).collect::<Vec<_>>();
        let (ka, kb) = (key(a), key(b));
        ka.iter()
            .zip(&kb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(ka.len().cmp(&kb.len()))
    });
    sorted
}

/// Builds the grid and fills it with mean mixture densities.
pub fn build_grid(preds: &[GmmPrediction]) -> Result<SummaryGrid> {
    let (lon_values, lat_values) = grid_axes(preds)?;
    let ordered = canonical(preds);
    let s = preds.len() as f64;
    let z = lon_values
        .iter()
        .map(|&lon| {
            lat_values
                .iter()
                .map(|&lat| {
                    let c = GeoPoint::raw(lon, lat);
                    let sum: f64 = ordered
                        .iter()
                        .map(|p| p.peaks().iter().map(|k| k.weight * pdf_unchecked(&c, &k.mu, k.sigma)).sum::<f64>())
                        .sum();
                    sum / s
                })
                .collect()
        })
        .collect();
    Ok(SummaryGrid { lon_values, lat_values, z })
}

/// Sliding maximum over `[i-4, i+5] × [j-4, j+5]`, clipped at the edges.
pub fn maxima_filter(z: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let window = |len: usize, i: usize| i.saturating_sub(WINDOW_BEFORE)..(i + WINDOW_AFTER + 1).min(len);
    let rows = z.len();
    let cols = z.first().map_or(0, Vec::len);
    let along_lat: Vec<Vec<f64>> = z
        .iter()
        .map(|row| (0..cols).map(|j| row[window(cols, j)].iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect())
        .collect();
    (0..rows)
        .map(|i| (0..cols).map(|j| window(rows, i).map(|r| along_lat[r][j]).fold(f64::NEG_INFINITY, f64::max)).collect())
        .collect()
}

/// Cells with `Z = M_fZ` and `Z > 0`, one per 8-connected equal-valued
/// plateau (the cell with the smallest longitude, then latitude).
pub fn local_maxima(z: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let filtered = maxima_filter(z);
    let rows = z.len();
    let cols = z.first().map_or(0, Vec::len);
    let is_max = |i: usize, j: usize| z[i][j] > 0.0 && z[i][j] == filtered[i][j];
    let mut seen = vec![vec![false; cols]; rows];
    let mut out = Vec::new();
    // row-major scan reaches each plateau first at its smallest (i, j)
    for i in 0..rows {
        for j in 0..cols {
            if seen[i][j] || !is_max(i, j) {
                continue;
            }
            out.push((i, j));
            let value = z[i][j];
            let mut stack = vec![(i, j)];
            seen[i][j] = true;
            while let Some((a, b)) = stack.pop() {
                for da in -1i64..=1 {
                    for db in -1i64..=1 {
                        let (na, nb) = (a as i64 + da, b as i64 + db);
                        if na < 0 || nb < 0 || na >= rows as i64 || nb >= cols as i64 {
                            continue;
                        }
                        let (na, nb) = (na as usize, nb as usize);
                        if !seen[na][nb] && z[na][nb] == value && is_max(na, nb) {
                            seen[na][nb] = true;
                            stack.push((na, nb));
                        }
                    }
                }
            }
        }
    }
    out
}

fn softmax_scores(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Estimate plus the grid it was read from.
pub fn estimate_user_with_grid(preds: &[GmmPrediction], k: usize) -> Result<(UserEstimate, SummaryGrid)> {
    if k == 0 {
        return invalid("top-K must be at least 1");
    }
    let grid = build_grid(preds)?;
    if grid.z.iter().flatten().any(|v| !v.is_finite()) {
        return Err(GeoError::Numeric("non-finite summary score".into()));
    }
    let mut maxima = local_maxima(&grid.z);
    if maxima.is_empty() {
        return Err(GeoError::Numeric("summary grid has no positive local maximum".into()));
    }
    maxima.sort_by(|a, b| grid.z[b.0][b.1].total_cmp(&grid.z[a.0][a.1]).then(a.cmp(b)));
    maxima.truncate(k);
    let points: Vec<GeoPoint> = maxima.iter().map(|&(i, j)| grid.point(i, j)).collect();
    let scores: Vec<f64> = maxima.iter().map(|&(i, j)| grid.z[i][j]).collect();
    let weights = (scores.len() > 1).then(|| softmax_scores(&scores));
    Ok((UserEstimate { points, scores, weights }, grid))
}

/// Top-`k` local maxima of the user's summary grid.
pub fn estimate_user(preds: &[GmmPrediction], k: usize) -> Result<UserEstimate> {
    Ok(estimate_user_with_grid(preds, k)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::GaussianPeak;
    use proptest::prelude::*;

    fn single(lon: f64, lat: f64, sigma: f64) -> GmmPrediction {
        GmmPrediction::single(GeoPoint::new(lon, lat).unwrap(), sigma).unwrap()
    }

    #[test]
    fn grid_sizes() {
        let (lon, lat) = grid_axes(&[single(15.5, 47.3, 1.0)]).unwrap();
        assert_eq!((lon.len(), lat.len()), (37, 20));
        let (lon, lat) = grid_axes(&[single(10.0, 50.0, 1.0)]).unwrap();
        assert_eq!((lon.len(), lat.len()), (36, 19));
        let (lon, lat) = grid_axes(&[single(1.5, 2.5, 1.0), single(1.5, 2.5, 3.0)]).unwrap();
        assert_eq!((lon.len(), lat.len()), (37, 20));
        assert!(grid_axes(&[]).is_err());
    }

    #[test]
    fn scores_examples() {
        let one = build_grid(&[single(15.5, 47.3, 1.0)]).unwrap();
        let (mut bi, mut bj) = (0, 0);
        for i in 0..one.lon_values.len() {
            for j in 0..one.lat_values.len() {
                if one.z[i][j] > one.z[bi][bj] {
                    (bi, bj) = (i, j);
                }
            }
        }
        assert_eq!(one.point(bi, bj), GeoPoint::raw(15.5, 47.3));
        let two = build_grid(&[single(15.5, 47.3, 1.0), single(15.5, 47.3, 1.0)]).unwrap();
        assert_eq!(one, two);

        let far = build_grid(&[single(-100.0, -20.0, 1.0), single(100.0, 20.0, 1.0)]).unwrap();
        let at = |lon: f64, lat: f64| {
            let i = far.lon_values.iter().position(|v| *v == lon).unwrap();
            let j = far.lat_values.iter().position(|v| *v == lat).unwrap();
            far.z[i][j]
        };
        assert!((at(-100.0, -20.0) - at(100.0, 20.0)).abs() < 1e-12);
    }

    #[test]
    fn filter_examples() {
        let constant = vec![vec![0.5; 7]; 9];
        assert_eq!(maxima_filter(&constant), constant);

        let mut spike = vec![vec![0.0; 30]; 30];
        spike[12][15] = 1.0;
        let f = maxima_filter(&spike);
        for i in 0..30 {
            for j in 0..30 {
                // cell (i, j) sees (12, 15) iff i-4 <= 12 <= i+5 and likewise for j
                let sees = (7..=16).contains(&i) && (10..=19).contains(&j);
                assert_eq!(f[i][j], if sees { 1.0 } else { 0.0 }, "({i}, {j})");
            }
        }

        let mut two = vec![vec![0.0; 30]; 30];
        two[3][3] = 0.7;
        two[15][20] = 0.9;
        assert_eq!(local_maxima(&two), vec![(3, 3), (15, 20)]);
    }

    #[test]
    fn plateau_keeps_smallest_cell() {
        let mut z = vec![vec![0.0; 20]; 20];
        for (i, j) in [(5, 5), (5, 6), (6, 6)] {
            z[i][j] = 0.4;
        }
        assert_eq!(local_maxima(&z), vec![(5, 5)]);
    }

    #[test]
    fn estimate_examples() {
        let preds = vec![single(10.0, 50.0, 1.0); 3];
        let e = estimate_user(&preds, 3).unwrap();
        assert_eq!(e.points, vec![GeoPoint::raw(10.0, 50.0)]);
        assert!(e.weights.is_none());

        let sym = vec![single(-100.0, -20.0, 1.0), single(100.0, 20.0, 1.0)];
        let e = estimate_user(&sym, 2).unwrap();
        assert_eq!(e.points.len(), 2);
        let w = e.weights.unwrap();
        assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12);
        assert!(estimate_user(&sym, 0).is_err());
    }

    fn arb_pred() -> impl Strategy<Value = GmmPrediction> {
        proptest::collection::vec((-175.0..175.0f64, -85.0..85.0f64, 0.2..40.0f64, 0.1..1.0f64), 1..=3).prop_map(|peaks| {
            let total: f64 = peaks.iter().map(|p| p.3).sum();
            GmmPrediction::new(
                peaks
                    .into_iter()
                    .map(|(lon, lat, sigma, w)| GaussianPeak { mu: GeoPoint::raw(lon, lat), sigma, weight: w / total })
                    .collect(),
            )
            .unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn estimate_invariants(preds in proptest::collection::vec(arb_pred(), 1..5), k in 1usize..5) {
            let (e, grid) = estimate_user_with_grid(&preds, k).unwrap();
            prop_assert!(!e.points.is_empty() && e.points.len() <= k);
            for p in &e.points {
                prop_assert!(grid.lon_values.contains(&p.lon) && grid.lat_values.contains(&p.lat));
            }
            prop_assert!(e.scores.windows(2).all(|w| w[0] >= w[1]));
            if let Some(w) = &e.weights {
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(w.windows(2).all(|p| p[0] >= p[1]));
            } else {
                prop_assert_eq!(e.points.len(), 1);
            }
            let mut rev = preds.clone();
            rev.reverse();
            prop_assert_eq!(estimate_user(&rev, k).unwrap(), e);
        }

        #[test]
        fn concentrated_mass_stays_in_region(centers in proptest::collection::vec((20.0..30.0f64, 40.0..50.0f64), 1..5)) {
            let preds: Vec<_> = centers.iter().map(|&(lon, lat)| single(lon, lat, 0.5)).collect();
            let e = estimate_user(&preds, 1).unwrap();
            let p = e.points[0];
            prop_assert!((20.0..=30.0).contains(&p.lon) && (40.0..=50.0).contains(&p.lat));
        }
    }
}
