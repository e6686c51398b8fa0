//! Metric multidimensional scaling by stress majorization.
//!
//! Given a symmetric dissimilarity matrix, this finds point coordinates
//! whose pairwise Euclidean distances approximate the dissimilarities by
//! minimizing raw stress, the sum over pairs of squared residuals. Each
//! iteration applies the Guttman transform, which never increases stress,
//! so the recorded stress history is non-increasing by construction.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{seed, Error, Result};

/// Settings for [`smacof_embedding`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmacofConfig {
    /// Dimension of the embedding space.
    pub embedding_dim: usize,
    /// Iteration cap.
    pub max_iter: usize,
    /// Stop once the relative stress decrease falls below this.
    pub rel_tol: f64,
    /// Seed for the Gaussian starting configuration.
    pub seed: u64,
}

impl Default for SmacofConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 10,
            max_iter: 500,
            rel_tol: 1e-8,
            seed: 0,
        }
    }
}

impl SmacofConfig {
    fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("iteration cap must be positive"));
        }
        if !(self.rel_tol.is_finite() && self.rel_tol >= 0.0) {
            return Err(Error::invalid("relative tolerance must be non-negative"));
        }
        Ok(())
    }
}

/// Result of a stress-majorization run.
#[derive(Debug, Clone)]
pub struct SmacofEmbedding {
    /// One row of coordinates per input object, centered at the origin.
    pub points: Array2<f64>,
    /// Raw stress after every completed iteration, starting with the
    /// initial configuration. Non-increasing.
    pub stress_history: Vec<f64>,
    /// Guttman iterations performed.
    pub iterations: usize,
    /// Whether the relative-decrease criterion was met within the cap.
    pub converged: bool,
}

impl SmacofEmbedding {
    /// Final raw stress.
    pub fn stress(&self) -> f64 {
        *self.stress_history.last().unwrap()
    }
}

/// Embeds a symmetric dissimilarity matrix into Euclidean coordinates.
pub fn smacof_embedding(delta: &Array2<f64>, cfg: &SmacofConfig) -> Result<SmacofEmbedding> {
    cfg.validate()?;
    validate_dissimilarities(delta)?;
    let k = delta.nrows();
    if k == 1 {
        return Ok(SmacofEmbedding {
            points: Array2::zeros((1, cfg.embedding_dim)),
            stress_history: vec![0.0],
            iterations: 0,
            converged: true,
        });
    }

    let mut rng = seed::rng(cfg.seed, "smacof-init");
    let mut x =
        Array2::from_shape_fn((k, cfg.embedding_dim), |_| rng.sample::<f64, _>(StandardNormal));
    let mut dist = pairwise_distances(&x);
    let mut stress = raw_stress(delta, &dist);
    let mut history = vec![stress];
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_iter {
        let x_next = guttman_transform(delta, &dist, &x);
        let dist_next = pairwise_distances(&x_next);
        let stress_next = raw_stress(delta, &dist_next);
        if stress_next > stress {
            // The transform cannot increase stress; a rise means the
            // iteration hit floating-point resolution, so keep the current
            // configuration.
            converged = true;
            break;
        }
        let decrease = stress - stress_next;
        x = x_next;
        dist = dist_next;
        stress = stress_next;
        history.push(stress);
        iterations += 1;
        if decrease <= cfg.rel_tol * stress.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }

    let centroid = x.mean_axis(Axis(0)).expect("at least one row");
    let points = x - &centroid;
    Ok(SmacofEmbedding {
        points,
        stress_history: history,
        iterations,
        converged,
    })
}

fn validate_dissimilarities(delta: &Array2<f64>) -> Result<()> {
    let (rows, cols) = delta.dim();
    if rows == 0 {
        return Err(Error::data("dissimilarity matrix is empty".to_string()));
    }
    if rows != cols {
        return Err(Error::shape(format!(
            "dissimilarity matrix is {rows}x{cols}, expected square"
        )));
    }
    for i in 0..rows {
        for j in 0..cols {
            let v = delta[[i, j]];
            if !v.is_finite() || v < 0.0 {
                return Err(Error::data(format!(
                    "dissimilarity ({i},{j}) is {v}, expected finite and non-negative"
                )));
            }
            if i == j && v != 0.0 {
                return Err(Error::data(format!(
                    "dissimilarity ({i},{i}) is {v}, the diagonal must be zero"
                )));
            }
            if delta[[j, i]] != v {
                return Err(Error::data(format!(
                    "dissimilarities ({i},{j}) and ({j},{i}) differ"
                )));
            }
        }
    }
    Ok(())
}

fn pairwise_distances(x: &Array2<f64>) -> Array2<f64> {
    let k = x.nrows();
    let mut dist = Array2::zeros((k, k));
    for i in 0..k {
        for j in (i + 1)..k {
            let mut sq = 0.0;
            for c in 0..x.ncols() {
                let diff = x[[i, c]] - x[[j, c]];
                sq += diff * diff;
            }
            let d = sq.sqrt();
            dist[[i, j]] = d;
            dist[[j, i]] = d;
        }
    }
    dist
}

fn raw_stress(delta: &Array2<f64>, dist: &Array2<f64>) -> f64 {
    let k = delta.nrows();
    let mut stress = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            let r = delta[[i, j]] - dist[[i, j]];
            stress += r * r;
        }
    }
    stress
}

/// One majorization step: `X <- B(X) X / k`, where `B` carries the ratios
/// of target to current distances. Coincident points contribute zero.
fn guttman_transform(delta: &Array2<f64>, dist: &Array2<f64>, x: &Array2<f64>) -> Array2<f64> {
    let k = x.nrows();
    let mut b = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        for j in (i + 1)..k {
            let d = dist[[i, j]];
            if d > 0.0 {
                let value = -delta[[i, j]] / d;
                b[[i, j]] = value;
                b[[j, i]] = value;
            }
        }
    }
    for i in 0..k {
        let off_diag: f64 = (0..k).filter(|&j| j != i).map(|j| b[[i, j]]).sum();
        b[[i, i]] = -off_diag;
    }
    b.dot(x) / k as f64
}
