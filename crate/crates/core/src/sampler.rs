//! Gibbs sampler for the occupancy model with an embedded learner.
//!
//! Each iteration runs, in order:
//!
//! 1. `z`: sites with a detection stay occupied; the rest draw from their
//!    full conditional given `psi_i` and `p`.
//! 2. `a`: probit auxiliaries `a_i ~ N(x_i'beta + f_i, 1)` truncated to the
//!    positive half-line when `z_i = 1`, the non-positive one otherwise.
//! 3. `beta`: conjugate normal draw given `a - f`.
//! 4. `f`: the learner is refit to `a - X beta` (every `refit_every` iterations).
//! 5. `p`: conjugate beta draw from detections at occupied sites.
//!
//! Given the seed the whole chain is bit-for-bit reproducible.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::learners::{CoordScaler, FittedSurface, Fitter, LearnerSpec};
use crate::model::{
    conditional_occupancy_prob, std_normal_cdf, Coefficients, DetectionParams, LatentState,
    OccupancyDataset,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Priors {
    /// Prior mean of `beta`; empty means all zeros.
    pub beta_mean: Vec<f64>,
    pub beta_var: f64,
    pub p_alpha: f64,
    pub p_beta: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            beta_mean: Vec::new(),
            beta_var: 2.25,
            p_alpha: 1.0,
            p_beta: 1.0,
        }
    }
}

impl Priors {
    fn mean_vector(&self, len: usize) -> Result<Vec<f64>> {
        if self.beta_mean.is_empty() {
            return Ok(vec![0.0; len]);
        }
        if self.beta_mean.len() != len {
            return Err(Error::Shape {
                expected: len,
                found: self.beta_mean.len(),
            });
        }
        Ok(self.beta_mean.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub refit_every: usize,
    pub priors: Priors,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            n_iter: 5000,
            burn_in: 1000,
            thin: 4,
            seed: 1,
            refit_every: 1,
            priors: Priors::default(),
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iter {
            return Err(Error::invalid(format!(
                "burn_in {} must be below n_iter {}",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin == 0 || self.refit_every == 0 {
            return Err(Error::invalid("thin and refit_every must be >= 1"));
        }
        let p = &self.priors;
        if !(p.beta_var > 0.0) || !p.beta_var.is_finite() {
            return Err(Error::invalid("beta_var must be positive"));
        }
        if !(p.p_alpha > 0.0 && p.p_beta > 0.0) {
            return Err(Error::invalid("p_alpha and p_beta must be positive"));
        }
        if p.beta_mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("beta_mean must be finite"));
        }
        Ok(())
    }

    /// Number of draws kept after burn-in and thinning.
    pub fn n_retained(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }
}

/// Training-site quantities that stay fixed during a chain.
#[derive(Debug, Clone)]
pub struct ChainData {
    /// Site coordinates after standardization.
    pub coords: Vec<[f64; 2]>,
    pub design: Vec<Vec<f64>>,
    pub visits: Vec<usize>,
    pub detections: Vec<usize>,
}

impl ChainData {
    pub fn new(data: &OccupancyDataset, indices: &[usize], scaler: &CoordScaler) -> Self {
        let sites = data.sites();
        let hist = data.histories();
        ChainData {
            coords: indices.iter().map(|&i| scaler.apply(sites[i].coords)).collect(),
            design: indices.iter().map(|&i| data.design_row(i)).collect(),
            visits: indices.iter().map(|&i| hist[i].len()).collect(),
            detections: indices.iter().map(|&i| hist[i].detections()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn n_coef(&self) -> usize {
        self.design.first().map_or(1, Vec::len)
    }
}

#[derive(Debug, Clone)]
pub struct ChainState {
    pub latent: LatentState,
    pub beta: Coefficients,
    pub p: DetectionParams,
    pub surface: FittedSurface,
    /// `f` evaluated at the training sites.
    pub f_values: Vec<f64>,
}

impl ChainState {
    pub fn initial(data: &ChainData, priors: &Priors) -> Result<Self> {
        let n = data.len();
        let z: Vec<bool> = data.detections.iter().map(|&d| d > 0).collect();
        let a = z.iter().map(|&zi| if zi { 0.5 } else { -0.5 }).collect();
        Ok(ChainState {
            latent: LatentState { z, a },
            beta: Coefficients::new(priors.mean_vector(data.n_coef())?)?,
            p: DetectionParams::new(0.5)?,
            surface: FittedSurface::zero(),
            f_values: vec![0.0; n],
        })
    }

    /// Linear predictor `x_i'beta + f_i` at every training site.
    pub fn linear_predictor(&self, data: &ChainData) -> Vec<f64> {
        let b = self.beta.as_slice();
        data.design
            .iter()
            .zip(&self.f_values)
            .map(|(x, f)| x.iter().zip(b).map(|(xv, bv)| xv * bv).sum::<f64>() + f)
            .collect()
    }
}

/// Precomputed Cholesky factor of the `beta` full-conditional precision.
#[derive(Debug, Clone)]
pub struct BetaConditional {
    chol: Cholesky<f64, Dyn>,
    prior_term: DVector<f64>,
    design: DMatrix<f64>,
}

impl BetaConditional {
    pub fn new(data: &ChainData, priors: &Priors) -> Result<Self> {
        let k = data.n_coef();
        let n = data.len();
        let design = DMatrix::from_fn(n, k, |i, j| data.design[i][j]);
        let precision =
            design.transpose() * &design + DMatrix::identity(k, k) / priors.beta_var;
        let chol = precision
            .cholesky()
            .ok_or_else(|| Error::LinearAlgebra("beta precision is singular".into()))?;
        let prior_term = DVector::from_vec(priors.mean_vector(k)?) / priors.beta_var;
        Ok(BetaConditional {
            chol,
            prior_term,
            design,
        })
    }

    /// Mean and covariance of `beta | a, f`.
    pub fn moments(&self, state: &ChainState) -> (DVector<f64>, DMatrix<f64>) {
        let resid = DVector::from_iterator(
            state.latent.a.len(),
            state.latent.a.iter().zip(&state.f_values).map(|(a, f)| a - f),
        );
        let rhs = self.design.transpose() * resid + &self.prior_term;
        (self.chol.solve(&rhs), self.chol.inverse())
    }
}

/// Conjugate `Beta(alpha, beta)` parameters of `p | z, y`.
pub fn p_conditional(state: &ChainState, data: &ChainData, priors: &Priors) -> (f64, f64) {
    let (mut s, mut t) = (0usize, 0usize);
    for i in 0..data.len() {
        if state.latent.z[i] {
            s += data.detections[i];
            t += data.visits[i];
        }
    }
    (priors.p_alpha + s as f64, priors.p_beta + (t - s) as f64)
}

/// `P(z_i = 1 | rest)` for every training site.
pub fn z_conditional(state: &ChainState, data: &ChainData) -> Result<Vec<f64>> {
    let eta = state.linear_predictor(data);
    (0..data.len())
        .map(|i| {
            if data.detections[i] > 0 {
                Ok(1.0)
            } else {
                conditional_occupancy_prob(std_normal_cdf(eta[i]), state.p.get(), data.visits[i])
            }
        })
        .collect()
}

pub fn update_z<R: Rng>(state: &mut ChainState, data: &ChainData, rng: &mut R) -> Result<()> {
    let probs = z_conditional(state, data)?;
    for (i, prob) in probs.into_iter().enumerate() {
        if data.detections[i] > 0 {
            state.latent.z[i] = true;
        } else {
            let u: f64 = rng.random();
            state.latent.z[i] = u < prob;
        }
    }
    Ok(())
}

/// Outcome of one truncated-normal draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedDraw {
    pub value: f64,
    pub used_fallback: bool,
}

const REJECTION_CAP: usize = 1000;

/// Draws `X ~ N(mean, 1)` conditioned on `X > 0`.
pub fn sample_positive_normal<R: Rng>(mean: f64, rng: &mut R) -> TruncatedDraw {
    let lower = -mean;
    for _ in 0..REJECTION_CAP {
        let t = if lower < 0.45 {
            let e: f64 = rng.sample(StandardNormal);
            if e <= lower {
                continue;
            }
            e
        } else {
            // exponential proposal for the tail
            let rate = 0.5 * (lower + (lower * lower + 4.0).sqrt());
            let e: f64 = rng.sample(Exp1);
            let t = lower + e / rate;
            let u: f64 = rng.random();
            if u > (-0.5 * (t - rate) * (t - rate)).exp() {
                continue;
            }
            t
        };
        let value = mean + t;
        if value > 0.0 {
            return TruncatedDraw {
                value,
                used_fallback: false,
            };
        }
    }
    // inverse-CDF on the complementary scale
    let std = Normal::standard();
    let tail = std_normal_cdf(-lower);
    let u: f64 = rng.random();
    let mut t = if tail > 0.0 {
        -std.inverse_cdf((u * tail).max(f64::MIN_POSITIVE))
    } else {
        lower
    };
    if !t.is_finite() || t < lower {
        t = lower;
    }
    let value = (mean + t).max(f64::MIN_POSITIVE);
    TruncatedDraw {
        value,
        used_fallback: true,
    }
}

/// Draws `a_i` for every site; returns the number of inverse-CDF fallbacks.
pub fn update_aux<R: Rng>(state: &mut ChainState, data: &ChainData, rng: &mut R) -> usize {
    let eta = state.linear_predictor(data);
    let mut fallbacks = 0;
    for i in 0..data.len() {
        let draw = if state.latent.z[i] {
            sample_positive_normal(eta[i], rng)
        } else {
            let d = sample_positive_normal(-eta[i], rng);
            TruncatedDraw {
                value: -d.value,
                ..d
            }
        };
        fallbacks += usize::from(draw.used_fallback);
        state.latent.a[i] = draw.value;
    }
    fallbacks
}

pub fn update_beta<R: Rng>(
    state: &mut ChainState,
    conditional: &BetaConditional,
    rng: &mut R,
) -> Result<()> {
    let resid = DVector::from_iterator(
        state.latent.a.len(),
        state.latent.a.iter().zip(&state.f_values).map(|(a, f)| a - f),
    );
    let rhs = conditional.design.transpose() * resid + &conditional.prior_term;
    let mean = conditional.chol.solve(&rhs);
    let k = mean.len();
    let e = DVector::from_iterator(k, (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)));
    // precision = L L', so L'^{-1} e has covariance precision^{-1}
    let offset = conditional
        .chol
        .l()
        .transpose()
        .solve_upper_triangular(&e)
        .ok_or_else(|| Error::LinearAlgebra("singular beta factor".into()))?;
    state.beta = Coefficients::new((mean + offset).iter().copied().collect())?;
    Ok(())
}

/// Refits the learner to `a - X beta` and caches `f` at the training sites.
pub fn update_f(state: &mut ChainState, data: &ChainData, fitter: &Fitter) -> Result<()> {
    let b = state.beta.as_slice();
    let targets: Vec<f64> = data
        .design
        .iter()
        .zip(&state.latent.a)
        .map(|(x, a)| a - x.iter().zip(b).map(|(xv, bv)| xv * bv).sum::<f64>())
        .collect();
    let (surface, values) = fitter.fit(&targets)?;
    state.surface = surface;
    state.f_values = values;
    Ok(())
}

pub fn update_p<R: Rng>(
    state: &mut ChainState,
    data: &ChainData,
    priors: &Priors,
    rng: &mut R,
) -> Result<()> {
    let (alpha, beta) = p_conditional(state, data, priors);
    let dist = Beta::new(alpha, beta)
        .map_err(|e| Error::invalid(format!("beta({alpha}, {beta}): {e}")))?;
    let p: f64 = dist.sample(rng);
    state.p = DetectionParams::new(p.clamp(1e-12, 1.0 - 1e-12))?;
    Ok(())
}

/// One retained posterior draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub beta: Vec<f64>,
    pub p: f64,
    pub surface: FittedSurface,
    /// `psi` at the training sites.
    pub psi: Vec<f64>,
    #[serde(with = "bits")]
    pub z: Vec<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub iterations: usize,
    pub refits: usize,
    pub truncated_normal_fallbacks: usize,
    /// Mean fraction of training sites with `z = 1` over retained draws.
    pub mean_occupied_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub learner: LearnerSpec,
    pub config: McmcConfig,
    /// Map from input coordinates to the learner's coordinates.
    pub scaler: CoordScaler,
    pub train_site_ids: Vec<String>,
    pub n_covariates: usize,
    pub draws: Vec<Draw>,
    pub diagnostics: ChainDiagnostics,
}

impl PosteriorSamples {
    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    /// `psi` for every draw (outer) at every location (inner).
    pub fn psi_draws(
        &self,
        coords: &[[f64; 2]],
        covariates: Option<&[Vec<f64>]>,
    ) -> Result<Vec<Vec<f64>>> {
        if let Some(c) = covariates {
            if c.len() != coords.len() {
                return Err(Error::Shape {
                    expected: coords.len(),
                    found: c.len(),
                });
            }
        }
        let design: Vec<Vec<f64>> = (0..coords.len())
            .map(|i| {
                let mut row = vec![1.0];
                match covariates {
                    Some(c) => row.extend_from_slice(&c[i]),
                    None => row.extend(std::iter::repeat_n(0.0, self.n_covariates)),
                }
                row
            })
            .collect();
        if design.first().is_some_and(|r| r.len() != 1 + self.n_covariates) {
            return Err(Error::Shape {
                expected: self.n_covariates,
                found: design[0].len() - 1,
            });
        }
        let scaled = self.scaler.apply_all(coords);
        if scaled.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite prediction coordinates"));
        }
        Ok(self
            .draws
            .iter()
            .map(|d| {
                scaled
                    .iter()
                    .zip(&design)
                    .map(|(s, x)| {
                        let lin: f64 = x.iter().zip(&d.beta).map(|(a, b)| a * b).sum();
                        std_normal_cdf(lin + d.surface.predict_one(*s))
                    })
                    .collect()
            })
            .collect())
    }
}

/// Posterior mean of `psi` at each location.
///
/// Without covariates for the locations, covariate terms are set to zero.
pub fn posterior_psi_surface(
    samples: &PosteriorSamples,
    coords: &[[f64; 2]],
    covariates: Option<&[Vec<f64>]>,
) -> Result<Vec<f64>> {
    if samples.draws.is_empty() {
        return Err(Error::invalid("posterior has no retained draws"));
    }
    let draws = samples.psi_draws(coords, covariates)?;
    let m = draws.len() as f64;
    let mut mean = vec![0.0; coords.len()];
    for d in &draws {
        for (acc, v) in mean.iter_mut().zip(d) {
            *acc += v;
        }
    }
    Ok(mean.into_iter().map(|s| s / m).collect())
}

/// Runs one chain on the training sites of `data`.
pub fn run_chain(
    data: &OccupancyDataset,
    learner: &LearnerSpec,
    cfg: &McmcConfig,
) -> Result<PosteriorSamples> {
    cfg.validate()?;
    learner.validate()?;
    let train = data.train_indices();
    if train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let raw: Vec<[f64; 2]> = train.iter().map(|&i| data.sites()[i].coords).collect();
    let scaler = CoordScaler::fit(&raw);
    let chain_data = ChainData::new(data, &train, &scaler);
    let fitter = learner.prepare(&chain_data.coords)?;
    let beta_cond = BetaConditional::new(&chain_data, &cfg.priors)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = ChainState::initial(&chain_data, &cfg.priors)?;
    let mut diagnostics = ChainDiagnostics::default();
    let mut draws = Vec::with_capacity(cfg.n_retained());
    let mut occupied = 0.0;

    for iter in 0..cfg.n_iter {
        update_z(&mut state, &chain_data, &mut rng)?;
        diagnostics.truncated_normal_fallbacks += update_aux(&mut state, &chain_data, &mut rng);
        update_beta(&mut state, &beta_cond, &mut rng)?;
        if iter % cfg.refit_every == 0 {
            update_f(&mut state, &chain_data, &fitter).map_err(|e| Error::LearnerFailed {
                iteration: iter,
                source: Box::new(e),
            })?;
            diagnostics.refits += 1;
        }
        update_p(&mut state, &chain_data, &cfg.priors, &mut rng)?;
        check_finite(&state, iter)?;
        diagnostics.iterations += 1;

        if iter >= cfg.burn_in && (iter - cfg.burn_in + 1) % cfg.thin == 0 {
            assert!(
                state
                    .latent
                    .z
                    .iter()
                    .zip(&chain_data.detections)
                    .all(|(&z, &d)| z || d == 0),
                "detected site left unoccupied"
            );
            debug_assert!(state.latent.is_consistent());
            let psi = state
                .linear_predictor(&chain_data)
                .into_iter()
                .map(std_normal_cdf)
                .collect();
            occupied +=
                state.latent.z.iter().filter(|&&z| z).count() as f64 / chain_data.len() as f64;
            draws.push(Draw {
                beta: state.beta.as_slice().to_vec(),
                p: state.p.get(),
                surface: state.surface.clone(),
                psi,
                z: state.latent.z.clone(),
            });
        }
    }
    if !draws.is_empty() {
        diagnostics.mean_occupied_fraction = occupied / draws.len() as f64;
    }

    Ok(PosteriorSamples {
        learner: *learner,
        config: cfg.clone(),
        scaler,
        train_site_ids: train.iter().map(|&i| data.sites()[i].id.clone()).collect(),
        n_covariates: data.n_covariates(),
        draws,
        diagnostics,
    })
}

fn check_finite(state: &ChainState, iteration: usize) -> Result<()> {
    if let Some(i) = state.f_values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            iteration,
            detail: format!("f[{i}] = {}", state.f_values[i]),
        });
    }
    if let Some(i) = state.latent.a.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            iteration,
            detail: format!("a[{i}] = {}", state.latent.a[i]),
        });
    }
    if !state.p.get().is_finite() {
        return Err(Error::NonFinite {
            iteration,
            detail: format!("p = {}, beta = {:?}", state.p.get(), state.beta.as_slice()),
        });
    }
    Ok(())
}

mod bits {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(z: &[bool], s: S) -> Result<S::Ok, S::Error> {
        let text: String = z.iter().map(|&b| if b { '1' } else { '0' }).collect();
        s.serialize_str(&text)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
        let text = String::deserialize(d)?;
        text.chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                other => Err(D::Error::custom(format!("bad occupancy flag {other:?}"))),
            })
            .collect()
    }
}
