//! Directions on the unit sphere.
//!
//! Sky positions are kept as 3D unit vectors rather than (lat, lon) pairs so
//! that per-coordinate (chordal) distances stay continuous across the 0/360
//! longitude seam. Latitude/longitude accessors exist for I/O only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const UNIT_NORM_TOL: f64 = 1e-9;

/// A direction on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialLocation {
    direction: [f64; 3],
}

impl SpatialLocation {
    /// Builds from an explicit 3-vector, which must already have unit norm
    /// (within 1e-9); no silent renormalization.
    pub fn from_unit(direction: [f64; 3]) -> Result<Self> {
        let norm = (direction[0] * direction[0]
            + direction[1] * direction[1]
            + direction[2] * direction[2])
            .sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::validation(format!(
                "direction ({}, {}, {}) has norm {norm}, not 1 within {UNIT_NORM_TOL}",
                direction[0], direction[1], direction[2]
            )));
        }
        Ok(SpatialLocation { direction })
    }

    /// Builds from latitude/longitude in degrees.
    pub fn from_latlon(lat_deg: f64, lon_deg: f64) -> Result<Self> {
        Ok(SpatialLocation {
            direction: latlon_to_unit(lat_deg, lon_deg)?,
        })
    }

    pub fn direction(&self) -> [f64; 3] {
        self.direction
    }

    /// (latitude, longitude) in degrees, longitude mapped into [0, 360).
    pub fn latlon(&self) -> (f64, f64) {
        unit_to_latlon(self.direction)
    }
}

/// Converts latitude/longitude in degrees to a unit vector
/// (cos lat cos lon, cos lat sin lon, sin lat).
pub fn latlon_to_unit(lat_deg: f64, lon_deg: f64) -> Result<[f64; 3]> {
    if !(-90.0..=90.0).contains(&lat_deg) {
        return Err(Error::validation(format!(
            "latitude {lat_deg} outside [-90, 90]"
        )));
    }
    if !lon_deg.is_finite() {
        return Err(Error::validation(format!("longitude {lon_deg} not finite")));
    }
    let lat = lat_deg.to_radians();
    let lon = lon_deg.to_radians();
    Ok([lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()])
}

/// Inverse of [`latlon_to_unit`]; longitude returned in [0, 360).
pub fn unit_to_latlon(direction: [f64; 3]) -> (f64, f64) {
    let lat = direction[2].clamp(-1.0, 1.0).asin().to_degrees();
    let mut lon = direction[1].atan2(direction[0]).to_degrees();
    if lon < 0.0 {
        lon += 360.0;
    }
    if lon >= 360.0 {
        lon -= 360.0;
    }
    (lat, lon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn poles_and_axes() {
        let north = latlon_to_unit(90.0, 123.0).unwrap();
        assert_relative_eq!(north[2], 1.0, epsilon = 1e-15);
        assert!(north[0].abs() < 1e-15 && north[1].abs() < 1e-15);

        let y_axis = latlon_to_unit(0.0, 90.0).unwrap();
        assert!(y_axis[0].abs() < 1e-15);
        assert_relative_eq!(y_axis[1], 1.0, epsilon = 1e-15);

        let x_axis = latlon_to_unit(0.0, 0.0).unwrap();
        assert_relative_eq!(x_axis[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn round_trip_angles() {
        let (lat0, lon0) = (-30.0, 240.0);
        let v = latlon_to_unit(lat0, lon0).unwrap();
        let (lat1, lon1) = unit_to_latlon(v);
        // 1e-9 radians is ~5.7e-8 degrees.
        assert!((lat1 - lat0).abs() < 6e-8);
        assert!((lon1 - lon0).abs() < 6e-8);
    }

    #[test]
    fn round_trip_vectors() {
        for &(lat, lon) in &[(0.0, 0.0), (45.0, 45.0), (-89.5, 359.5), (12.3, 180.0)] {
            let v = latlon_to_unit(lat, lon).unwrap();
            let (la, lo) = unit_to_latlon(v);
            let w = latlon_to_unit(la, lo).unwrap();
            for k in 0..3 {
                assert!((v[k] - w[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn latitude_range_enforced() {
        assert!(latlon_to_unit(90.5, 0.0).is_err());
        assert!(latlon_to_unit(-91.0, 0.0).is_err());
    }

    #[test]
    fn non_unit_rejected() {
        assert!(SpatialLocation::from_unit([1.0, 1.0, 0.0]).is_err());
        assert!(SpatialLocation::from_unit([0.0, 0.0, 0.9999]).is_err());
        assert!(SpatialLocation::from_unit([0.0, 0.0, 1.0]).is_ok());
    }
}
