//! Proper conditional-autoregressive (CAR) field on a regular lattice.
//!
//! Sites are assigned to the cells of an `nx x ny` grid over their bounding
//! box. The fitted cell effects are the posterior mode
//! `(Q + obs_prec A'A) u = obs_prec A' r` with `Q = tau (D - rho W)` built
//! from rook adjacency. Cell `(ix, iy)` has index `iy * nx + ix`, so `Q` is
//! banded with half-bandwidth `nx` and is factorized in band storage.

use serde::{Deserialize, Serialize};

use super::BoundingBox;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmrfParams {
    pub grid_nx: usize,
    pub grid_ny: usize,
    pub rho: f64,
    pub tau_prec: f64,
    pub obs_prec: f64,
}

impl Default for GmrfParams {
    fn default() -> Self {
        GmrfParams {
            grid_nx: 15,
            grid_ny: 15,
            rho: 0.99,
            tau_prec: 1.0,
            obs_prec: 10.0,
        }
    }
}

impl GmrfParams {
    pub fn validate(&self) -> Result<()> {
        if self.grid_nx == 0 || self.grid_ny == 0 {
            return Err(Error::invalid("gmrf grid must have at least one cell"));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::invalid(format!("gmrf rho {} must lie in (0,1)", self.rho)));
        }
        if !(self.tau_prec > 0.0) || !(self.obs_prec > 0.0) {
            return Err(Error::invalid("gmrf precisions must be positive"));
        }
        Ok(())
    }
}

/// Regular lattice over a bounding box with clamped point-to-cell lookup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub origin: [f64; 2],
    pub cell_size: [f64; 2],
    pub nx: usize,
    pub ny: usize,
}

impl Lattice {
    pub fn over(bbox: &BoundingBox, nx: usize, ny: usize) -> Self {
        let (lo, width) = bbox.padded_extent();
        Lattice {
            origin: lo,
            cell_size: [width[0] / nx as f64, width[1] / ny as f64],
            nx,
            ny,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_of(&self, s: [f64; 2]) -> usize {
        let axis = |v: f64, o: f64, w: f64, n: usize| {
            let k = ((v - o) / w).floor();
            if k.is_nan() || k < 0.0 {
                0
            } else {
                (k as usize).min(n - 1)
            }
        };
        let ix = axis(s[0], self.origin[0], self.cell_size[0], self.nx);
        let iy = axis(s[1], self.origin[1], self.cell_size[1], self.ny);
        iy * self.nx + ix
    }

    /// Rook neighbours of a cell.
    pub fn neighbours(&self, cell: usize) -> impl Iterator<Item = usize> + '_ {
        let (ix, iy) = (cell % self.nx, cell / self.nx);
        let left = (ix > 0).then(|| cell - 1);
        let right = (ix + 1 < self.nx).then(|| cell + 1);
        let down = (iy > 0).then(|| cell - self.nx);
        let up = (iy + 1 < self.ny).then(|| cell + self.nx);
        [left, right, down, up].into_iter().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmrfSurface {
    pub lattice: Lattice,
    pub effects: Vec<f64>,
}

impl GmrfSurface {
    pub fn predict(&self, s: [f64; 2]) -> f64 {
        self.effects[self.lattice.cell_of(s)]
    }
}

/// Lower-triangular Cholesky factor in band storage: `band[i][d] = L[i][i-d]`.
#[derive(Debug, Clone)]
struct BandCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandCholesky {
    /// Factorizes a symmetric banded matrix given by `entry(i, j)` for `j <= i`.
    fn factor(n: usize, bw: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let mut sum = entry(i, j);
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    sum -= band[i * w + (i - k)] * band[j * w + (j - k)];
                }
                if j == i {
                    if !(sum > 0.0) {
                        return Err(Error::LinearAlgebra(format!(
                            "gmrf precision not positive definite at cell {i}"
                        )));
                    }
                    band[i * w] = sum.sqrt();
                } else {
                    band[i * w + (i - j)] = sum / band[j * w];
                }
            }
        }
        Ok(BandCholesky { n, bw, band })
    }

    fn solve(&self, rhs: &mut [f64]) {
        let w = self.bw + 1;
        for i in 0..self.n {
            let mut sum = rhs[i];
            for k in i.saturating_sub(self.bw)..i {
                sum -= self.band[i * w + (i - k)] * rhs[k];
            }
            rhs[i] = sum / self.band[i * w];
        }
        for i in (0..self.n).rev() {
            let mut sum = rhs[i];
            for k in i + 1..(i + self.bw + 1).min(self.n) {
                sum -= self.band[k * w + (k - i)] * rhs[k];
            }
            rhs[i] = sum / self.band[i * w];
        }
    }
}

/// Cell assignment and factorized posterior precision for fixed sites.
#[derive(Debug, Clone)]
pub struct GmrfFitter {
    lattice: Lattice,
    cells: Vec<usize>,
    obs_prec: f64,
    chol: BandCholesky,
}

impl GmrfFitter {
    pub fn new(coords: &[[f64; 2]], params: GmrfParams) -> Result<Self> {
        params.validate()?;
        if coords.is_empty() {
            return Err(Error::invalid("gmrf needs at least one site"));
        }
        let lattice = Lattice::over(&BoundingBox::of(coords), params.grid_nx, params.grid_ny);
        let cells: Vec<usize> = coords.iter().map(|s| lattice.cell_of(*s)).collect();
        let n_cells = lattice.n_cells();
        let mut counts = vec![0.0; n_cells];
        for &c in &cells {
            counts[c] += 1.0;
        }
        let precision = gmrf_system_entry(&lattice, &params, &counts);
        let chol = BandCholesky::factor(n_cells, lattice.nx, precision)?;
        Ok(GmrfFitter {
            lattice,
            cells,
            obs_prec: params.obs_prec,
            chol,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn fit(&self, targets: &[f64]) -> Result<GmrfSurface> {
        Ok(self.fit_with_values(targets)?.0)
    }

    pub fn fit_with_values(&self, targets: &[f64]) -> Result<(GmrfSurface, Vec<f64>)> {
        if targets.len() != self.cells.len() {
            return Err(Error::Shape {
                expected: self.cells.len(),
                found: targets.len(),
            });
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("non-finite gmrf target"));
        }
        let mut rhs = vec![0.0; self.lattice.n_cells()];
        for (&c, t) in self.cells.iter().zip(targets) {
            rhs[c] += t;
        }
        for v in &mut rhs {
            *v *= self.obs_prec;
        }
        self.chol.solve(&mut rhs);
        let values = self.cells.iter().map(|&c| rhs[c]).collect();
        Ok((
            GmrfSurface {
                lattice: self.lattice,
                effects: rhs,
            },
            values,
        ))
    }
}

/// Entry `(i, j)` of `tau (D - rho W) + obs_prec diag(counts)`.
fn gmrf_system_entry<'a>(
    lattice: &'a Lattice,
    params: &'a GmrfParams,
    counts: &'a [f64],
) -> impl Fn(usize, usize) -> f64 + 'a {
    move |i, j| {
        if i == j {
            params.tau_prec * lattice.neighbours(i).count() as f64 + params.obs_prec * counts[i]
        } else if lattice.neighbours(i).any(|k| k == j) {
            -params.tau_prec * params.rho
        } else {
            0.0
        }
    }
}

pub fn fit_gmrf(coords: &[[f64; 2]], targets: &[f64], params: GmrfParams) -> Result<GmrfSurface> {
    GmrfFitter::new(coords, params)?.fit(targets)
}
