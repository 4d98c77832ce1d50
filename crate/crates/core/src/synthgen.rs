//! Synthetic occupancy surfaces on a regular unit-square grid.
//!
//! | scenario | `f(s)` |
//! |---|---|
//! | 1 | checkerboard of `blocks x blocks` squares, `+a` / `-a` |
//! | 2 | `c0 + c1 * |s - (0.5, 0.5)|` |
//! | 3 | `a cos(2 pi x) cos(2 pi y)` |
//! | 4 | proper CAR field on the grid, scaled to mean marginal sd |
//! | 5 | Gaussian process, exponential covariance |
//! | 6 | Gaussian process, squared-exponential covariance |
//!
//! Scenarios 1 to 3 do not depend on the seed.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{std_normal_cdf, DetectionHistory, OccupancyDataset, Role, Site};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub p: f64,
    pub beta0: f64,
    pub block_amplitude: f64,
    pub blocks: usize,
    pub circle_intercept: f64,
    pub circle_slope: f64,
    pub cosine_amplitude: f64,
    pub car_rho: f64,
    pub car_sd: f64,
    pub gp_range: f64,
    pub gp_sd: f64,
    pub gp_jitter: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            p: 0.5,
            beta0: 0.0,
            block_amplitude: 1.5,
            blocks: 2,
            circle_intercept: -2.0,
            circle_slope: 5.0,
            cosine_amplitude: 1.5,
            car_rho: 0.99,
            car_sd: 1.0,
            gp_range: 0.2,
            gp_sd: 1.0,
            gp_jitter: 1e-6,
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::invalid(format!("p {} must lie in (0,1)", self.p)));
        }
        if self.blocks == 0 {
            return Err(Error::invalid("blocks must be >= 1"));
        }
        if !(self.car_rho > 0.0 && self.car_rho < 1.0) {
            return Err(Error::invalid("car_rho must lie in (0,1)"));
        }
        if !(self.gp_range > 0.0 && self.gp_sd > 0.0 && self.car_sd > 0.0) {
            return Err(Error::invalid("ranges and standard deviations must be positive"));
        }
        if !(self.gp_jitter >= 0.0) {
            return Err(Error::invalid("gp_jitter must be nonnegative"));
        }
        let finite = [
            self.beta0,
            self.block_amplitude,
            self.circle_intercept,
            self.circle_slope,
            self.cosine_amplitude,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("scenario constants must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { nx: 30, ny: 30 }
    }
}

impl GridSpec {
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    /// Cell centers on the unit square, row by row from the bottom.
    pub fn centers(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(self.n_cells());
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                out.push([
                    (ix as f64 + 0.5) / self.nx as f64,
                    (iy as f64 + 0.5) / self.ny as f64,
                ]);
            }
        }
        out
    }
}

impl std::str::FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::invalid(format!("grid {s:?} is not of the form NXxNY")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| Error::invalid(format!("bad grid dimension {t:?}")))
        };
        Ok(GridSpec {
            nx: parse(a)?,
            ny: parse(b)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSurface {
    pub scenario: u8,
    pub grid: GridSpec,
    pub coords: Vec<[f64; 2]>,
    pub f: Vec<f64>,
    pub psi: Vec<f64>,
    pub params: ScenarioParams,
    pub seed: u64,
}

/// Closed-form `f` for scenarios 1 to 3; `None` for the random scenarios.
pub fn scenario_function(scenario: u8, params: &ScenarioParams, s: [f64; 2]) -> Option<f64> {
    match scenario {
        1 => {
            let k = params.blocks as f64;
            let block = |v: f64| ((v * k).floor().max(0.0) as usize).min(params.blocks - 1);
            let a = params.block_amplitude;
            Some(if (block(s[0]) + block(s[1])) % 2 == 0 { a } else { -a })
        }
        2 => {
            let r = (s[0] - 0.5).hypot(s[1] - 0.5);
            Some(params.circle_intercept + params.circle_slope * r)
        }
        3 => {
            let tau = std::f64::consts::TAU;
            Some(params.cosine_amplitude * (tau * s[0]).cos() * (tau * s[1]).cos())
        }
        _ => None,
    }
}

fn standard_normals(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn car_field(grid: GridSpec, params: &ScenarioParams, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let n = grid.n_cells();
    let nx = grid.nx;
    let mut q = DMatrix::zeros(n, n);
    for c in 0..n {
        let (ix, iy) = (c % nx, c / nx);
        let mut nb = Vec::with_capacity(4);
        if ix > 0 {
            nb.push(c - 1);
        }
        if ix + 1 < nx {
            nb.push(c + 1);
        }
        if iy > 0 {
            nb.push(c - nx);
        }
        if iy + 1 < grid.ny {
            nb.push(c + nx);
        }
        q[(c, c)] = nb.len() as f64;
        for k in nb {
            q[(c, k)] = -params.car_rho;
        }
    }
    let chol = q
        .cholesky()
        .ok_or_else(|| Error::LinearAlgebra("CAR precision not positive definite".into()))?;
    let cov = chol.inverse();
    let mean_sd = (0..n).map(|i| cov[(i, i)].sqrt()).sum::<f64>() / n as f64;
    // Q = L L'  =>  L'^{-1} e has covariance Q^{-1}
    let e = standard_normals(rng, n);
    let u = chol
        .l()
        .transpose()
        .solve_upper_triangular(&e)
        .ok_or_else(|| Error::LinearAlgebra("singular CAR factor".into()))?;
    let scale = params.car_sd / mean_sd;
    Ok(u.iter().map(|v| v * scale).collect())
}

fn gp_field(
    coords: &[[f64; 2]],
    params: &ScenarioParams,
    squared: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let n = coords.len();
    let var = params.gp_sd * params.gp_sd;
    let cov = DMatrix::from_fn(n, n, |i, j| {
        let d = (coords[i][0] - coords[j][0]).hypot(coords[i][1] - coords[j][1]) / params.gp_range;
        let c = if squared { (-d * d).exp() } else { (-d).exp() };
        var * c + if i == j { params.gp_jitter * var } else { 0.0 }
    });
    let chol = cov.cholesky().ok_or_else(|| {
        Error::LinearAlgebra("GP covariance not positive definite; raise gp_jitter".into())
    })?;
    let e = standard_normals(rng, n);
    Ok((chol.l() * e).iter().copied().collect())
}

/// True `f` and `psi = Phi(beta0 + f)` at every grid cell.
pub fn make_surface(
    scenario: u8,
    grid: GridSpec,
    params: &ScenarioParams,
    seed: u64,
) -> Result<ScenarioSurface> {
    params.validate()?;
    if !(1..=6).contains(&scenario) {
        return Err(Error::invalid(format!("unknown scenario {scenario}; expected 1-6")));
    }
    if grid.n_cells() == 0 {
        return Err(Error::invalid("grid has no cells"));
    }
    let coords = grid.centers();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = match scenario {
        1..=3 => coords
            .iter()
            .map(|&s| scenario_function(scenario, params, s).expect("closed-form scenario"))
            .collect(),
        4 => car_field(grid, params, &mut rng)?,
        5 => gp_field(&coords, params, false, &mut rng)?,
        _ => gp_field(&coords, params, true, &mut rng)?,
    };
    let psi = f.iter().map(|v| std_normal_cdf(params.beta0 + v)).collect();
    Ok(ScenarioSurface {
        scenario,
        grid,
        coords,
        f,
        psi,
        params: *params,
        seed,
    })
}

/// Sampled dataset together with the cells and true occupancy behind it.
#[derive(Debug, Clone)]
pub struct SampledDesign {
    pub dataset: OccupancyDataset,
    pub cells: Vec<usize>,
    pub z: Vec<bool>,
}

pub fn sample_design_detailed(
    surface: &ScenarioSurface,
    n_train: usize,
    n_holdout: usize,
    visits: usize,
    seed: u64,
) -> Result<SampledDesign> {
    let n_cells = surface.psi.len();
    let n = n_train + n_holdout;
    if n > n_cells {
        return Err(Error::invalid(format!(
            "{n} sites requested but the grid has {n_cells} cells"
        )));
    }
    if n_train == 0 || visits == 0 {
        return Err(Error::invalid("need at least one training site and one visit"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // separate stream from the surface draw
    rng.set_stream(1);
    let cells = index::sample(&mut rng, n_cells, n).into_vec();
    let p = surface.params.p;
    let mut sites = Vec::with_capacity(n);
    let mut histories = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for &c in &cells {
        let id = format!("cell{c:04}");
        let s = surface.coords[c];
        let occupied = rng.random::<f64>() < surface.psi[c];
        let y = (0..visits)
            .map(|_| u8::from(occupied && rng.random::<f64>() < p))
            .collect();
        sites.push(Site::new(id.clone(), s[0], s[1])?);
        histories.push(DetectionHistory::new(id, y)?);
        z.push(occupied);
    }
    let roles = (0..n)
        .map(|k| if k < n_train { Role::Train } else { Role::Holdout })
        .collect();
    Ok(SampledDesign {
        dataset: OccupancyDataset::new(sites, histories, None, roles)?,
        cells,
        z,
    })
}

/// Disjoint random train and holdout cells with simulated detection histories.
pub fn sample_design(
    surface: &ScenarioSurface,
    n_train: usize,
    n_holdout: usize,
    visits: usize,
    seed: u64,
) -> Result<OccupancyDataset> {
    Ok(sample_design_detailed(surface, n_train, n_holdout, visits, seed)?.dataset)
}
