//! Field observations: counts with exposures and known background rates.

use crate::data::location::SpatialLocation;
use crate::error::{Error, Result};

/// Which coordinate columns a field CSV uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordFormat {
    /// `lat_deg,lon_deg` columns.
    LatLon,
    /// `ux,uy,uz` columns.
    UnitVec,
}

/// Observed counts at sky locations, with per-location exposure time and a
/// known additive background rate.
///
/// Counts are stored as `f64`. The standard constructor and the CSV loader
/// enforce nonnegative integers (the Poisson contract); the Gaussian
/// calibration mode works on real-valued observations, admitted through
/// [`FieldDataset::new_real`].
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDataset {
    locations: Vec<SpatialLocation>,
    counts: Vec<f64>,
    exposures: Vec<f64>,
    backgrounds: Vec<f64>,
    label: String,
}

impl FieldDataset {
    /// Builds a count dataset, enforcing the Poisson-side invariants:
    /// counts nonnegative integers, exposures strictly positive, backgrounds
    /// nonnegative.
    pub fn new(
        locations: Vec<SpatialLocation>,
        counts: Vec<f64>,
        exposures: Vec<f64>,
        backgrounds: Vec<f64>,
        label: impl Into<String>,
    ) -> Result<Self> {
        for (i, &c) in counts.iter().enumerate() {
            if !c.is_finite() || c < 0.0 || c.fract() != 0.0 {
                return Err(Error::validation(format!(
                    "count at index {i} is {c}; expected a nonnegative integer"
                )));
            }
        }
        Self::new_real(locations, counts, exposures, backgrounds, label)
    }

    /// As [`new`](Self::new) but allowing real-valued observations, for the
    /// Gaussian likelihood mode.
    pub fn new_real(
        locations: Vec<SpatialLocation>,
        counts: Vec<f64>,
        exposures: Vec<f64>,
        backgrounds: Vec<f64>,
        label: impl Into<String>,
    ) -> Result<Self> {
        let n = locations.len();
        if n == 0 {
            return Err(Error::validation("field dataset needs at least one record"));
        }
        if counts.len() != n || exposures.len() != n || backgrounds.len() != n {
            return Err(Error::validation(format!(
                "field dataset length mismatch: {} locations, {} counts, {} exposures, {} backgrounds",
                n,
                counts.len(),
                exposures.len(),
                backgrounds.len()
            )));
        }
        for (i, &c) in counts.iter().enumerate() {
            if !c.is_finite() {
                return Err(Error::validation(format!(
                    "observation at index {i} is not finite"
                )));
            }
        }
        for (i, &e) in exposures.iter().enumerate() {
            if !e.is_finite() || e <= 0.0 {
                return Err(Error::validation(format!(
                    "exposure at index {i} is {e}; expected a positive number of seconds"
                )));
            }
        }
        for (i, &b) in backgrounds.iter().enumerate() {
            if !b.is_finite() || b < 0.0 {
                return Err(Error::validation(format!(
                    "background rate at index {i} is {b}; expected a nonnegative rate"
                )));
            }
        }
        Ok(FieldDataset {
            locations,
            counts,
            exposures,
            backgrounds,
            label: label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn locations(&self) -> &[SpatialLocation] {
        &self.locations
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn exposures(&self) -> &[f64] {
        &self.exposures
    }

    pub fn backgrounds(&self) -> &[f64] {
        &self.backgrounds
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// True when every observation is a nonnegative integer, i.e. usable with
    /// the Poisson likelihood.
    pub fn has_integer_counts(&self) -> bool {
        self.counts.iter().all(|&c| c >= 0.0 && c.fract() == 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loc() -> SpatialLocation {
        SpatialLocation::from_latlon(10.0, 20.0).unwrap()
    }

    #[test]
    fn integer_counts_enforced() {
        let l = vec![loc()];
        assert!(FieldDataset::new(l.clone(), vec![3.5], vec![1.0], vec![0.0], "t").is_err());
        assert!(FieldDataset::new(l.clone(), vec![-1.0], vec![1.0], vec![0.0], "t").is_err());
        assert!(FieldDataset::new(l.clone(), vec![3.0], vec![1.0], vec![0.0], "t").is_ok());
        // The real-valued constructor admits the same data the count one rejects.
        assert!(FieldDataset::new_real(l, vec![3.5], vec![1.0], vec![0.0], "t").is_ok());
    }

    #[test]
    fn exposure_must_be_positive() {
        let l = vec![loc()];
        assert!(FieldDataset::new(l.clone(), vec![1.0], vec![0.0], vec![0.0], "t").is_err());
        assert!(FieldDataset::new(l, vec![1.0], vec![-2.0], vec![0.0], "t").is_err());
    }

    #[test]
    fn lengths_must_agree() {
        let l = vec![loc(), loc()];
        assert!(FieldDataset::new(l, vec![1.0], vec![1.0], vec![0.0], "t").is_err());
    }

    #[test]
    fn empty_rejected() {
        assert!(FieldDataset::new(vec![], vec![], vec![], vec![], "t").is_err());
    }
}
