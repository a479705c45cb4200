//! WGS84 coordinates and the two distances used by the toolkit.
//!
//! Training compares points on the Plate carrée plane, where longitude and
//! latitude degrees are treated as planar x/y and nothing wraps at the
//! antimeridian. Evaluation uses great-circle kilometers.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Mean Earth radius used for every great-circle distance.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// A (longitude, latitude) pair in degrees.
///
/// Labels are always built through [`GeoPoint::new`], which enforces the
/// WGS84 ranges. Head outputs are raw regression values and may leave those
/// ranges during training; they are built with [`GeoPoint::raw`] and
/// brought back with [`GeoPoint::clamped`] only at reporting time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        if !lon.is_finite() || !lat.is_finite() {
            return invalid(format!("non-finite coordinate ({lon}, {lat})"));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return invalid(format!("longitude {lon} outside [-180, 180]"));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return invalid(format!("latitude {lat} outside [-90, 90]"));
        }
        Ok(Self { lon, lat })
    }

    /// Unvalidated point, used for raw head outputs.
    pub const fn raw(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }

    pub fn is_finite(&self) -> bool {
        self.lon.is_finite() && self.lat.is_finite()
    }

    pub fn in_range(&self) -> bool {
        self.is_finite() && (-180.0..=180.0).contains(&self.lon) && (-90.0..=90.0).contains(&self.lat)
    }

    /// Clamps both coordinates into their WGS84 ranges.
    pub fn clamped(&self) -> Self {
        Self {
            lon: self.lon.clamp(-180.0, 180.0),
            lat: self.lat.clamp(-90.0, 90.0),
        }
    }

    /// Planar squared distance without input checks.
    #[inline]
    pub(crate) fn sq_dist(&self, other: &GeoPoint) -> f64 {
        let dlon = self.lon - other.lon;
        let dlat = self.lat - other.lat;
        dlon * dlon + dlat * dlat
    }

    /// Great-circle distance without input checks.
    pub(crate) fn haversine(&self, other: &GeoPoint) -> f64 {
        let phi1 = self.lat.to_radians();
        let phi2 = other.lat.to_radians();
        let dphi = phi2 - phi1;
        let dlambda = (other.lon - self.lon).to_radians();
        let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_KM * h.clamp(0.0, 1.0).sqrt().asin()
    }
}

fn check_finite(a: &GeoPoint, b: &GeoPoint) -> Result<()> {
    if a.is_finite() && b.is_finite() {
        Ok(())
    } else {
        invalid(format!("non-finite point in distance: {a:?}, {b:?}"))
    }
}

/// Squared Euclidean distance in degrees² on the Plate carrée plane.
///
/// There is no longitude wraparound: (-179, 0) and (179, 0) are 358° apart.
pub fn squared_euclidean_deg(a: &GeoPoint, b: &GeoPoint) -> Result<f64> {
    check_finite(a, b)?;
    Ok(a.sq_dist(b))
}

/// Great-circle distance in kilometers on a sphere of radius [`EARTH_RADIUS_KM`].
pub fn haversine_km(a: &GeoPoint, b: &GeoPoint) -> Result<f64> {
    check_finite(a, b)?;
    Ok(a.haversine(b))
}
