//! Out-of-sample −2×LPPD and Moran's I correlograms.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{site_log_likelihood, OccupancyDataset};
use crate::sampler::PosteriorSamples;

/// Holdout score of one fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub model: String,
    pub neg2_lppd: f64,
    /// Number of posterior draws averaged per site.
    #[serde(rename = "M")]
    pub m: usize,
    pub n_holdout: usize,
    pub site_ids: Vec<String>,
    pub site_lppd: Vec<f64>,
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `log((1/M) sum_m L(y | psi_m, p_m))` for one site.
pub fn site_lppd(visits: &[u8], psi: &[f64], p: &[f64]) -> Result<f64> {
    if psi.is_empty() || psi.len() != p.len() {
        return Err(Error::Shape {
            expected: p.len().max(1),
            found: psi.len(),
        });
    }
    if visits.is_empty() {
        return Err(Error::invalid("empty detection history"));
    }
    let logs: Vec<f64> = psi
        .iter()
        .zip(p)
        .map(|(&s, &q)| site_log_likelihood(visits, s, q))
        .collect();
    let v = log_sum_exp(&logs) - (psi.len() as f64).ln();
    if !v.is_finite() {
        return Err(Error::UndefinedStatistic(
            "zero predictive density at a holdout site".into(),
        ));
    }
    Ok(v)
}

/// Scores the sites `indices` of `data` under every retained draw.
pub fn neg2_lppd(
    samples: &PosteriorSamples,
    data: &OccupancyDataset,
    indices: &[usize],
    label: &str,
) -> Result<ScoreReport> {
    if indices.is_empty() {
        return Err(Error::UndefinedStatistic("holdout set is empty".into()));
    }
    if samples.draws.is_empty() {
        return Err(Error::invalid("posterior has no retained draws"));
    }
    let coords: Vec<[f64; 2]> = indices.iter().map(|&i| data.sites()[i].coords).collect();
    let covs: Option<Vec<Vec<f64>>> = data
        .covariates()
        .map(|c| indices.iter().map(|&i| c[i].clone()).collect());
    let psi = samples.psi_draws(&coords, covs.as_deref())?;
    let p: Vec<f64> = samples.draws.iter().map(|d| d.p).collect();
    let mut site_values = Vec::with_capacity(indices.len());
    for (k, &i) in indices.iter().enumerate() {
        let column: Vec<f64> = psi.iter().map(|row| row[k]).collect();
        site_values.push(site_lppd(data.histories()[i].visits(), &column, &p)?);
    }
    Ok(ScoreReport {
        model: label.to_string(),
        neg2_lppd: -2.0 * site_values.iter().sum::<f64>(),
        m: samples.draws.len(),
        n_holdout: indices.len(),
        site_ids: indices.iter().map(|&i| data.sites()[i].id.clone()).collect(),
        site_lppd: site_values,
    })
}

/// Naive occupancy minus posterior mean probability of at least one detection.
pub fn occupancy_residuals(
    samples: &PosteriorSamples,
    data: &OccupancyDataset,
    indices: &[usize],
) -> Result<Vec<f64>> {
    if samples.draws.is_empty() {
        return Err(Error::invalid("posterior has no retained draws"));
    }
    let coords: Vec<[f64; 2]> = indices.iter().map(|&i| data.sites()[i].coords).collect();
    let covs: Option<Vec<Vec<f64>>> = data
        .covariates()
        .map(|c| indices.iter().map(|&i| c[i].clone()).collect());
    let psi = samples.psi_draws(&coords, covs.as_deref())?;
    let m = samples.draws.len() as f64;
    Ok(indices
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let h = &data.histories()[i];
            let j = h.len() as i32;
            let expected: f64 = psi
                .iter()
                .zip(&samples.draws)
                .map(|(row, d)| row[k] * (1.0 - (1.0 - d.p).powi(j)))
                .sum::<f64>()
                / m;
            f64::from(u8::from(h.any_detection())) - expected
        })
        .collect())
}

fn centered(values: &[f64]) -> Result<(Vec<f64>, f64)> {
    if values.len() < 2 {
        return Err(Error::UndefinedStatistic("need at least two values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value"));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let dev: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let ss: f64 = dev.iter().map(|d| d * d).sum();
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(ss > 1e-28 * scale * scale * values.len() as f64) {
        return Err(Error::UndefinedStatistic("values have zero variance".into()));
    }
    Ok((dev, ss))
}

/// Moran's I with a dense weight matrix (zero diagonal).
pub fn morans_i(values: &[f64], weights: &[Vec<f64>]) -> Result<f64> {
    let n = values.len();
    if weights.len() != n || weights.iter().any(|r| r.len() != n) {
        return Err(Error::Shape {
            expected: n,
            found: weights.len(),
        });
    }
    let (dev, ss) = centered(values)?;
    let mut total = 0.0;
    let mut cross = 0.0;
    for i in 0..n {
        for j in 0..n {
            let w = weights[i][j];
            if i != j && w != 0.0 {
                if !(w > 0.0) || !w.is_finite() {
                    return Err(Error::invalid("weights must be nonnegative and finite"));
                }
                total += w;
                cross += w * dev[i] * dev[j];
            }
        }
    }
    if total == 0.0 {
        return Err(Error::UndefinedStatistic("all weights are zero".into()));
    }
    Ok(n as f64 / total * cross / ss)
}

/// One distance bin of a correlogram. `None` marks an empty bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelogramBin {
    pub lo: f64,
    pub hi: f64,
    pub moran_i: Option<f64>,
    pub env_lo: Option<f64>,
    pub env_hi: Option<f64>,
    pub pairs: usize,
}

impl CorrelogramBin {
    /// `Some(true)` when `I` lies outside the permutation envelope.
    pub fn outside_envelope(&self) -> Option<bool> {
        Some(self.moran_i? < self.env_lo? || self.moran_i? > self.env_hi?)
    }

    pub fn above_envelope(&self) -> Option<bool> {
        Some(self.moran_i? > self.env_hi?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlogram {
    pub bins: Vec<CorrelogramBin>,
    pub n_perm: usize,
    pub seed: u64,
}

/// Equal-width bin edges from 0 to half the largest pairwise distance.
pub fn default_bins(coords: &[[f64; 2]], n_bins: usize) -> Result<Vec<f64>> {
    if n_bins < 2 {
        return Err(Error::invalid("a correlogram needs at least two bins"));
    }
    let mut dmax = 0.0f64;
    for i in 0..coords.len() {
        for j in i + 1..coords.len() {
            dmax = dmax.max(distance(coords[i], coords[j]));
        }
    }
    if !(dmax > 0.0) {
        return Err(Error::Degenerate("all sites share one location".into()));
    }
    let half = dmax / 2.0;
    Ok((0..=n_bins).map(|k| half * k as f64 / n_bins as f64).collect())
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Bin index of a distance: bins are `(e_k, e_k+1]`, the first also holds `e_0`.
fn bin_of(edges: &[f64], d: f64) -> Option<usize> {
    if d < edges[0] || d > edges[edges.len() - 1] {
        return None;
    }
    let k = edges.partition_point(|&e| e < d);
    Some(k.saturating_sub(1))
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Moran's I per distance bin with a permutation envelope.
pub fn correlogram(
    values: &[f64],
    coords: &[[f64; 2]],
    edges: &[f64],
    n_perm: usize,
    seed: u64,
) -> Result<Correlogram> {
    let n = values.len();
    if coords.len() != n {
        return Err(Error::Shape {
            expected: n,
            found: coords.len(),
        });
    }
    if edges.len() < 3 {
        return Err(Error::invalid("a correlogram needs at least two bins"));
    }
    if edges.windows(2).any(|w| !(w[0] < w[1])) || edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::invalid("bin edges must be finite and strictly increasing"));
    }
    if n_perm == 0 {
        return Err(Error::invalid("n_perm must be >= 1"));
    }
    let (dev, ss) = centered(values)?;
    let n_bins = edges.len() - 1;

    let mut pairs: Vec<(u32, u32, u16)> = Vec::new();
    let mut counts = vec![0usize; n_bins];
    for i in 0..n {
        for j in i + 1..n {
            if let Some(k) = bin_of(edges, distance(coords[i], coords[j])) {
                pairs.push((i as u32, j as u32, k as u16));
                counts[k] += 1;
            }
        }
    }
    let stat = |v: &[f64]| -> Vec<f64> {
        let mut cross = vec![0.0; n_bins];
        for &(i, j, k) in &pairs {
            cross[k as usize] += v[i as usize] * v[j as usize];
        }
        cross
            .iter()
            .zip(&counts)
            .map(|(c, &w)| n as f64 * c / (w as f64 * ss))
            .collect()
    };
    let observed = stat(&dev);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm = dev.clone();
    let mut null: Vec<Vec<f64>> = vec![Vec::with_capacity(n_perm); n_bins];
    for _ in 0..n_perm {
        perm.shuffle(&mut rng);
        for (k, v) in stat(&perm).into_iter().enumerate() {
            null[k].push(v);
        }
    }

    let bins = (0..n_bins)
        .map(|k| {
            let filled = counts[k] > 0;
            let mut sorted = std::mem::take(&mut null[k]);
            sorted.sort_by(f64::total_cmp);
            CorrelogramBin {
                lo: edges[k],
                hi: edges[k + 1],
                moran_i: filled.then_some(observed[k]),
                env_lo: filled.then(|| quantile_sorted(&sorted, 0.025)),
                env_hi: filled.then(|| quantile_sorted(&sorted, 0.975)),
                pairs: counts[k],
            }
        })
        .collect();
    Ok(Correlogram { bins, n_perm, seed })
}
