//! Predictive-process (low-rank) Gaussian process with exponential covariance.
//!
//! Knots sit at the centres of a square grid over the coordinate bounding
//! box. The surface is `f(s) = b(s)' w` where `b(s)` holds the covariances
//! between `s` and every knot, and `w = (B'B + tau2 K)^{-1} B' r`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::BoundingBox;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpParams {
    /// Total knot count; must be a perfect square.
    pub n_knots: usize,
    /// Exponential range. `None` means 0.3 times the bounding-box diagonal.
    pub range_phi: Option<f64>,
    pub sill_sigma2: f64,
    pub nugget_tau2: f64,
}

impl Default for GpParams {
    fn default() -> Self {
        GpParams {
            n_knots: 100,
            range_phi: None,
            sill_sigma2: 1.0,
            nugget_tau2: 0.1,
        }
    }
}

impl GpParams {
    pub fn validate(&self) -> Result<()> {
        let side = knot_side(self.n_knots);
        if self.n_knots == 0 || side * side != self.n_knots {
            return Err(Error::invalid(format!(
                "n_knots {} is not a positive perfect square",
                self.n_knots
            )));
        }
        if let Some(phi) = self.range_phi {
            if !(phi > 0.0) || !phi.is_finite() {
                return Err(Error::invalid("range_phi must be positive"));
            }
        }
        if !(self.sill_sigma2 > 0.0) {
            return Err(Error::invalid("sill_sigma2 must be positive"));
        }
        if !(self.nugget_tau2 >= 0.0) {
            return Err(Error::invalid("nugget_tau2 must be >= 0"));
        }
        Ok(())
    }
}

fn knot_side(n_knots: usize) -> usize {
    (n_knots as f64).sqrt().round() as usize
}

#[inline]
pub(crate) fn exp_cov(sill: f64, range: f64, a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    sill * (-(dx * dx + dy * dy).sqrt() / range).exp()
}

/// Knot locations at cell centres of a `side x side` grid over `bbox`.
pub fn knot_grid(bbox: &BoundingBox, n_knots: usize) -> Vec<[f64; 2]> {
    let side = knot_side(n_knots);
    let (lo, width) = bbox.padded_extent();
    let mut knots = Vec::with_capacity(side * side);
    for iy in 0..side {
        for ix in 0..side {
            knots.push([
                lo[0] + (ix as f64 + 0.5) / side as f64 * width[0],
                lo[1] + (iy as f64 + 0.5) / side as f64 * width[1],
            ]);
        }
    }
    knots
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSurface {
    pub knots: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub range_phi: f64,
    pub sill_sigma2: f64,
}

impl GpSurface {
    pub fn predict(&self, s: [f64; 2]) -> f64 {
        let mut acc = 0.0;
        for (k, w) in self.knots.iter().zip(&self.weights) {
            acc += w * exp_cov(self.sill_sigma2, self.range_phi, s, *k);
        }
        acc
    }
}

/// Basis matrix and factorized normal equations for fixed site locations.
#[derive(Debug, Clone)]
pub struct GpFitter {
    n_sites: usize,
    knots: Vec<[f64; 2]>,
    range_phi: f64,
    sill: f64,
    /// Row-major `n x k` basis.
    basis: Vec<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl GpFitter {
    pub fn new(coords: &[[f64; 2]], params: GpParams) -> Result<Self> {
        params.validate()?;
        if coords.is_empty() {
            return Err(Error::invalid("low-rank GP needs at least one site"));
        }
        let bbox = BoundingBox::of(coords);
        let range_phi = params.range_phi.unwrap_or_else(|| {
            let d = bbox.diagonal();
            0.3 * if d > 0.0 { d } else { 1.0 }
        });
        let knots = knot_grid(&bbox, params.n_knots);
        Self::with_knots(coords, knots, range_phi, params.sill_sigma2, params.nugget_tau2)
    }

    /// Fitter with caller-chosen knot locations.
    pub fn with_knots(
        coords: &[[f64; 2]],
        knots: Vec<[f64; 2]>,
        range_phi: f64,
        sill: f64,
        nugget: f64,
    ) -> Result<Self> {
        if coords.is_empty() || knots.is_empty() {
            return Err(Error::invalid("low-rank GP needs sites and knots"));
        }
        let n = coords.len();
        let k = knots.len();
        let mut basis = vec![0.0; n * k];
        for (i, s) in coords.iter().enumerate() {
            for (j, kn) in knots.iter().enumerate() {
                basis[i * k + j] = exp_cov(sill, range_phi, *s, *kn);
            }
        }
        let b = DMatrix::from_row_slice(n, k, &basis);
        let knot_cov = DMatrix::from_fn(k, k, |a, c| exp_cov(sill, range_phi, knots[a], knots[c]));
        let system = b.transpose() * &b + knot_cov * nugget;
        let max_diag = system.diagonal().max();
        let chol = system
            .cholesky()
            .ok_or_else(|| Error::LinearAlgebra("low-rank GP system is not positive definite".into()))?;
        let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v * v));
        if !(min_pivot > 1e-13 * max_diag) {
            return Err(Error::LinearAlgebra(format!(
                "low-rank GP system is numerically singular (pivot {min_pivot:e})"
            )));
        }
        Ok(GpFitter {
            n_sites: n,
            knots,
            range_phi,
            sill,
            basis,
            chol,
        })
    }

    pub fn knots(&self) -> &[[f64; 2]] {
        &self.knots
    }

    pub fn fit(&self, targets: &[f64]) -> Result<GpSurface> {
        Ok(self.fit_with_values(targets)?.0)
    }

    pub fn fit_with_values(&self, targets: &[f64]) -> Result<(GpSurface, Vec<f64>)> {
        if targets.len() != self.n_sites {
            return Err(Error::Shape {
                expected: self.n_sites,
                found: targets.len(),
            });
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("non-finite GP target"));
        }
        let k = self.knots.len();
        let mut rhs = DVector::zeros(k);
        for (i, t) in targets.iter().enumerate() {
            let row = &self.basis[i * k..(i + 1) * k];
            for (r, b) in rhs.iter_mut().zip(row) {
                *r += b * t;
            }
        }
        let w = self.chol.solve(&rhs);
        let weights: Vec<f64> = w.iter().copied().collect();
        // same accumulation order as GpSurface::predict
        let values = (0..self.n_sites)
            .map(|i| {
                let row = &self.basis[i * k..(i + 1) * k];
                let mut acc = 0.0;
                for (wj, b) in weights.iter().zip(row) {
                    acc += wj * b;
                }
                acc
            })
            .collect();
        Ok((
            GpSurface {
                knots: self.knots.clone(),
                weights,
                range_phi: self.range_phi,
                sill_sigma2: self.sill,
            },
            values,
        ))
    }
}

pub fn fit_lowrank_gp(coords: &[[f64; 2]], targets: &[f64], params: GpParams) -> Result<GpSurface> {
    GpFitter::new(coords, params)?.fit(targets)
}
