use ndarray::Array2;

use crate::{Error, Result};

/// A discrete probability measure: `n` support points in `d` dimensions with
/// uniform mass `1/n` on each point.
///
/// Rows of [`DiscreteMeasure::points`] are points. All coordinates are
/// required to be finite at construction, so downstream code can rely on
/// finite cost matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: Array2<f64>,
}

impl DiscreteMeasure {
    /// Wraps an `n x d` matrix of support points.
    ///
    /// Fails when `n == 0`, `d == 0`, or any coordinate is not finite.
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::invalid("measure needs at least one support point"));
        }
        if points.ncols() == 0 {
            return Err(Error::invalid("support points need at least one coordinate"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("support points must be finite"));
        }
        Ok(Self { points })
    }

    /// Builds a measure from rows given as slices, mostly for tests and FFI.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("measure needs at least one support point"));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::shape("all points must have the same dimension"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let points = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| Error::shape(e.to_string()))?;
        Self::new(points)
    }

    /// Number of support points.
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    /// Never true: construction rejects empty point sets.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Ambient dimension of the support points.
    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// Uniform weight carried by each point.
    pub fn weight(&self) -> f64 {
        1.0 / self.points.nrows() as f64
    }

    /// The `n x d` matrix of support points.
    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }
}
