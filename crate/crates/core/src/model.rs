//! Domain types and the pure likelihood mathematics of the occupancy model.
//!
//! A site `i` is truly occupied (`z_i = 1`) with probability
//! `psi_i = Phi(x_i' beta + f(s_i))`, and each of its `J_i` visits detects the
//! species with probability `p` when it is present. Detections at an
//! unoccupied site are impossible, so the likelihood of a history is
//! zero-inflated.

use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};

/// Lower/upper clamp applied to `psi` before taking logarithms.
pub const PSI_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub id: String,
    pub coords: [f64; 2],
}

impl Site {
    pub fn new(id: impl Into<String>, x: f64, y: f64) -> Result<Self> {
        let id = id.into();
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::invalid(format!("site {id}: non-finite coordinates")));
        }
        Ok(Site {
            id,
            coords: [x, y],
        })
    }
}

/// Ordered binary outcomes of the visits to one site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionHistory {
    pub site_id: String,
    visits: Vec<u8>,
}

impl DetectionHistory {
    pub fn new(site_id: impl Into<String>, visits: Vec<u8>) -> Result<Self> {
        let site_id = site_id.into();
        if visits.is_empty() {
            return Err(Error::invalid(format!("site {site_id}: empty detection history")));
        }
        if let Some(bad) = visits.iter().find(|&&v| v > 1) {
            return Err(Error::invalid(format!(
                "site {site_id}: detection value {bad} is not 0 or 1"
            )));
        }
        Ok(DetectionHistory { site_id, visits })
    }

    pub fn visits(&self) -> &[u8] {
        &self.visits
    }

    /// Number of visits `J_i`.
    pub fn len(&self) -> usize {
        self.visits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visits.is_empty()
    }

    pub fn detections(&self) -> usize {
        self.visits.iter().filter(|&&v| v == 1).count()
    }

    pub fn any_detection(&self) -> bool {
        self.visits.contains(&1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Holdout,
}

/// Sites, their detection histories, optional site covariates and the
/// train/holdout partition. All per-site vectors are index-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyDataset {
    sites: Vec<Site>,
    histories: Vec<DetectionHistory>,
    covariates: Option<Vec<Vec<f64>>>,
    roles: Vec<Role>,
}

impl OccupancyDataset {
    pub fn new(
        sites: Vec<Site>,
        histories: Vec<DetectionHistory>,
        covariates: Option<Vec<Vec<f64>>>,
        roles: Vec<Role>,
    ) -> Result<Self> {
        let n = sites.len();
        if histories.len() != n {
            return Err(Error::Shape {
                expected: n,
                found: histories.len(),
            });
        }
        if roles.len() != n {
            return Err(Error::Shape {
                expected: n,
                found: roles.len(),
            });
        }
        let mut seen = std::collections::HashSet::with_capacity(n);
        for (site, hist) in sites.iter().zip(&histories) {
            if !seen.insert(site.id.as_str()) {
                return Err(Error::invalid(format!("duplicate site id {}", site.id)));
            }
            if site.id != hist.site_id {
                return Err(Error::invalid(format!(
                    "history for {} is aligned with site {}",
                    hist.site_id, site.id
                )));
            }
        }
        if let Some(cov) = &covariates {
            if cov.len() != n {
                return Err(Error::Shape {
                    expected: n,
                    found: cov.len(),
                });
            }
            let q = cov.first().map_or(0, Vec::len);
            for row in cov {
                if row.len() != q {
                    return Err(Error::Shape {
                        expected: q,
                        found: row.len(),
                    });
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("non-finite covariate value"));
                }
            }
        }
        Ok(OccupancyDataset {
            sites,
            histories,
            covariates,
            roles,
        })
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn histories(&self) -> &[DetectionHistory] {
        &self.histories
    }

    pub fn covariates(&self) -> Option<&[Vec<f64>]> {
        self.covariates.as_deref()
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    /// Number of site covariates `q` (excluding the intercept).
    pub fn n_covariates(&self) -> usize {
        self.covariates
            .as_ref()
            .and_then(|c| c.first())
            .map_or(0, Vec::len)
    }

    /// Design row `(1, x_1, ..., x_q)` of site `i`.
    pub fn design_row(&self, i: usize) -> Vec<f64> {
        let mut row = Vec::with_capacity(1 + self.n_covariates());
        row.push(1.0);
        if let Some(cov) = &self.covariates {
            row.extend_from_slice(&cov[i]);
        }
        row
    }

    pub fn indices(&self, role: Role) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.roles[i] == role).collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices(Role::Train)
    }

    pub fn holdout_indices(&self) -> Vec<usize> {
        self.indices(Role::Holdout)
    }

    pub fn with_roles(mut self, roles: Vec<Role>) -> Result<Self> {
        if roles.len() != self.len() {
            return Err(Error::Shape {
                expected: self.len(),
                found: roles.len(),
            });
        }
        self.roles = roles;
        Ok(self)
    }

    /// Sites restricted to `indices`, in that order, all marked as training.
    pub fn subset(&self, indices: &[usize]) -> Result<OccupancyDataset> {
        OccupancyDataset::new(
            indices.iter().map(|&i| self.sites[i].clone()).collect(),
            indices.iter().map(|&i| self.histories[i].clone()).collect(),
            self.covariates
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i].clone()).collect()),
            vec![Role::Train; indices.len()],
        )
    }
}

/// Occupancy regression coefficients, intercept first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Coefficients(Vec<f64>);

impl Coefficients {
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::invalid("coefficient vector needs an intercept"));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("non-finite coefficient"));
        }
        Ok(Coefficients(beta))
    }

    pub fn zeros(len: usize) -> Self {
        Coefficients(vec![0.0; len.max(1)])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Linear predictor `x' beta`.
    pub fn dot(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.0.len() {
            return Err(Error::Shape {
                expected: self.0.len(),
                found: x.len(),
            });
        }
        Ok(self.0.iter().zip(x).map(|(b, v)| b * v).sum())
    }
}

/// Constant per-visit detection probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DetectionParams(f64);

impl DetectionParams {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!("detection probability {p} not in (0,1)")));
        }
        Ok(DetectionParams(p))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Latent occupancy `z` and the probit auxiliary variables `a`.
///
/// `a_i > 0` exactly when `z_i` is true.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub z: Vec<bool>,
    pub a: Vec<f64>,
}

impl LatentState {
    /// `z` set to the naive occupancy of each history, `a` to `+-0.5`.
    pub fn from_histories<'a>(histories: impl IntoIterator<Item = &'a DetectionHistory>) -> Self {
        let z: Vec<bool> = histories.into_iter().map(|h| h.any_detection()).collect();
        let a = z.iter().map(|&zi| if zi { 0.5 } else { -0.5 }).collect();
        LatentState { z, a }
    }

    pub fn is_consistent(&self) -> bool {
        self.z.len() == self.a.len()
            && self.z.iter().zip(&self.a).all(|(&z, &a)| (a > 0.0) == z)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkFunction {
    #[default]
    Probit,
}

impl LinkFunction {
    /// Maps a linear predictor onto a probability.
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            LinkFunction::Probit => std_normal_cdf(eta),
        }
    }
}

/// Standard normal CDF, accurate far into the lower tail.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn inv_probit(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::invalid(format!("inv_probit of non-finite value {x}")));
    }
    Ok(std_normal_cdf(x))
}

/// `psi_i = Phi(x_i' beta + f(s_i))`.
pub fn occupancy_prob(beta: &Coefficients, x: &[f64], f_si: f64) -> Result<f64> {
    let eta = beta.dot(x)? + f_si;
    inv_probit(eta)
}

/// Likelihood of a detection history with `z` marginalized out.
pub fn site_marginal_likelihood(history: &DetectionHistory, psi: f64, p: f64) -> Result<f64> {
    check_psi_p(psi, p)?;
    Ok(marginal_likelihood(history.visits(), psi, p))
}

pub(crate) fn marginal_likelihood(visits: &[u8], psi: f64, p: f64) -> f64 {
    let j = visits.len() as i32;
    let s = visits.iter().filter(|&&v| v == 1).count() as i32;
    let present = psi * p.powi(s) * (1.0 - p).powi(j - s);
    if s == 0 {
        present + (1.0 - psi)
    } else {
        present
    }
}

/// Log of [`site_marginal_likelihood`] with `psi` clamped to
/// `[PSI_CLAMP, 1 - PSI_CLAMP]` so that the result is always finite.
pub fn site_log_likelihood(visits: &[u8], psi: f64, p: f64) -> f64 {
    let psi = psi.clamp(PSI_CLAMP, 1.0 - PSI_CLAMP);
    let j = visits.len() as f64;
    let s = visits.iter().filter(|&&v| v == 1).count() as f64;
    let log_present = psi.ln() + s * p.ln() + (j - s) * (-p).ln_1p();
    if s == 0.0 {
        // log(exp(lp) + (1 - psi)) with both terms strictly positive
        let log_absent = (-psi).ln_1p();
        let hi = log_present.max(log_absent);
        hi + ((log_present - hi).exp() + (log_absent - hi).exp()).ln()
    } else {
        log_present
    }
}

/// `P(z_i = 1 | y_i = 0, psi, p)` for a site with `visits` non-detections.
pub fn conditional_occupancy_prob(psi: f64, p: f64, visits: usize) -> Result<f64> {
    if visits == 0 {
        return Err(Error::invalid("conditional occupancy needs at least one visit"));
    }
    if !(0.0..=1.0).contains(&psi) || !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("psi={psi}, p={p} outside [0,1]")));
    }
    let num = psi * (1.0 - p).powi(visits as i32);
    let den = num + (1.0 - psi);
    if den <= 0.0 {
        return Err(Error::Degenerate(format!(
            "conditional occupancy is 0/0 at psi={psi}, p={p}"
        )));
    }
    Ok(num / den)
}

fn check_psi_p(psi: f64, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&psi) {
        return Err(Error::invalid(format!("psi {psi} outside [0,1]")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("p {p} outside (0,1)")));
    }
    Ok(())
}
