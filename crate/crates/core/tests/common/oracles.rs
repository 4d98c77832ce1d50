//! Independent reference computations shared by the oracle and acceptance tests.

use rand::Rng;
use spatial_occupancy::learners::{fit_tree, CoordScaler, FittedSurface, GmrfParams, LearnerSpec, SvrParams, TreeParams};
use spatial_occupancy::model::{conditional_occupancy_prob, std_normal_cdf, Coefficients, DetectionParams, OccupancyDataset};
use spatial_occupancy::sampler::{
    p_conditional, z_conditional, BetaConditional, ChainData, ChainDiagnostics, ChainState, Draw, McmcConfig,
    PosteriorSamples, Priors,
};
use statrs::distribution::{Beta, Continuous};

use super::{dataset, dist, gauss_solve, rng, uniform_coords};

pub fn sse(y: &[f64]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let m = y.iter().sum::<f64>() / y.len() as f64;
    y.iter().map(|v| (v - m).powi(2)).sum()
}

/// Every axis-aligned split of `idx` into two non-empty parts.
pub fn all_splits(coords: &[[f64; 2]], idx: &[usize]) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut out = Vec::new();
    for f in 0..2 {
        let mut vals: Vec<f64> = idx.iter().map(|&i| coords[i][f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| coords[i][f] <= t);
            out.push((l, r));
        }
    }
    out
}

pub fn targets_of(y: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| y[i]).collect()
}

pub fn best_depth1(coords: &[[f64; 2]], y: &[f64], idx: &[usize]) -> f64 {
    let mut best = sse(&targets_of(y, idx));
    for (l, r) in all_splits(coords, idx) {
        best = best.min(sse(&targets_of(y, &l)) + sse(&targets_of(y, &r)));
    }
    best
}

pub fn best_depth2(coords: &[[f64; 2]], y: &[f64]) -> f64 {
    let idx: Vec<usize> = (0..y.len()).collect();
    let mut best = best_depth1(coords, y, &idx);
    for (l, r) in all_splits(coords, &idx) {
        best = best.min(best_depth1(coords, y, &l) + best_depth1(coords, y, &r));
    }
    best
}

pub fn depth2_params() -> TreeParams {
    TreeParams {
        max_depth: 2,
        min_leaf: 1,
        min_improvement: 0.0,
    }
}

pub fn tree_sse(coords: &[[f64; 2]], y: &[f64], params: TreeParams) -> f64 {
    let tree = fit_tree(coords, y, params).unwrap();
    coords.iter().zip(y).map(|(s, v)| (tree.predict(*s) - v).powi(2)).sum()
}

pub fn rbf(gamma: f64, a: [f64; 2], b: [f64; 2]) -> f64 {
    (-gamma * dist(a, b).powi(2)).exp()
}

/// Largest violation of the epsilon-insensitive KKT conditions.
pub fn svr_kkt_violation(
    coords: &[[f64; 2]],
    y: &[f64],
    alpha: &[f64],
    alpha_star: &[f64],
    bias: f64,
    p: &SvrParams,
) -> f64 {
    let n = y.len();
    let theta: Vec<f64> = (0..n).map(|i| alpha[i] - alpha_star[i]).collect();
    let mut worst = theta.iter().sum::<f64>().abs();
    let bound = 1e-12 * p.c.max(1.0);
    for i in 0..n {
        let f: f64 = (0..n).map(|j| theta[j] * rbf(p.rbf_gamma, coords[i], coords[j])).sum::<f64>() + bias;
        let resid = y[i] - f;
        assert!(alpha[i] >= -bound && alpha[i] <= p.c + bound);
        assert!(alpha_star[i] >= -bound && alpha_star[i] <= p.c + bound);
        // alpha pushes f up when the target is above the tube
        let up = resid - p.epsilon;
        let down = -resid - p.epsilon;
        let v_a = if alpha[i] <= bound {
            up.max(0.0)
        } else if alpha[i] >= p.c - bound {
            (-up).max(0.0)
        } else {
            up.abs()
        };
        let v_s = if alpha_star[i] <= bound {
            down.max(0.0)
        } else if alpha_star[i] >= p.c - bound {
            (-down).max(0.0)
        } else {
            down.abs()
        };
        worst = worst.max(v_a).max(v_s);
    }
    worst
}

pub fn expcov(sill: f64, phi: f64, a: [f64; 2], b: [f64; 2]) -> f64 {
    sill * (-dist(a, b) / phi).exp()
}

/// Weights of the predictive-process normal equations by a dense solve.
pub fn gp_oracle(
    coords: &[[f64; 2]],
    y: &[f64],
    knots: &[[f64; 2]],
    phi: f64,
    sill: f64,
    nugget: f64,
) -> Vec<f64> {
    let k = knots.len();
    let b: Vec<Vec<f64>> = coords
        .iter()
        .map(|s| knots.iter().map(|kn| expcov(sill, phi, *s, *kn)).collect())
        .collect();
    let mut a = vec![vec![0.0; k]; k];
    let mut rhs = vec![0.0; k];
    for r in 0..k {
        for c in 0..k {
            let btb: f64 = b.iter().map(|row| row[r] * row[c]).sum();
            a[r][c] = btb + nugget * expcov(sill, phi, knots[r], knots[c]);
        }
        rhs[r] = b.iter().zip(y).map(|(row, t)| row[r] * t).sum();
    }
    gauss_solve(a, rhs)
}

/// Cell effects by a dense solve assembled from the lattice geometry alone.
pub fn gmrf_oracle(
    coords: &[[f64; 2]],
    y: &[f64],
    origin: [f64; 2],
    cell: [f64; 2],
    nx: usize,
    ny: usize,
    p: &GmrfParams,
) -> Vec<f64> {
    let m = nx * ny;
    let idx = |ix: usize, iy: usize| iy * nx + ix;
    let mut a = vec![vec![0.0; m]; m];
    for iy in 0..ny {
        for ix in 0..nx {
            let c = idx(ix, iy);
            let mut nbrs = Vec::new();
            if ix > 0 {
                nbrs.push(idx(ix - 1, iy));
            }
            if ix + 1 < nx {
                nbrs.push(idx(ix + 1, iy));
            }
            if iy > 0 {
                nbrs.push(idx(ix, iy - 1));
            }
            if iy + 1 < ny {
                nbrs.push(idx(ix, iy + 1));
            }
            a[c][c] = p.tau_prec * nbrs.len() as f64;
            for nb in nbrs {
                a[c][nb] = -p.tau_prec * p.rho;
            }
        }
    }
    let mut rhs = vec![0.0; m];
    for (s, t) in coords.iter().zip(y) {
        let ix = (((s[0] - origin[0]) / cell[0]).floor().max(0.0) as usize).min(nx - 1);
        let iy = (((s[1] - origin[1]) / cell[1]).floor().max(0.0) as usize).min(ny - 1);
        let c = idx(ix, iy);
        a[c][c] += p.obs_prec;
        rhs[c] += p.obs_prec * t;
    }
    gauss_solve(a, rhs)
}

pub struct Frozen {
    pub data: OccupancyDataset,
    pub chain: ChainData,
    pub state: ChainState,
    pub priors: Priors,
}

/// A random small dataset with an arbitrary, detection-consistent state.
pub fn frozen_state(seed: u64, n_cov: usize) -> Frozen {
    let mut r = rng(seed);
    let n = r.random_range(15..40);
    let coords = uniform_coords(&mut r, n);
    let visits: Vec<Vec<u8>> = (0..n)
        .map(|_| {
            let j = r.random_range(1..7);
            let rate = r.random::<f64>();
            (0..j).map(|_| u8::from(r.random::<f64>() < rate * 0.6)).collect()
        })
        .collect();
    let covs = (n_cov > 0).then(|| {
        (0..n)
            .map(|_| (0..n_cov).map(|_| 2.0 * r.random::<f64>() - 1.0).collect())
            .collect()
    });
    let data = dataset(&coords, &visits, covs);
    let idx: Vec<usize> = (0..n).collect();
    let chain = ChainData::new(&data, &idx, &CoordScaler::identity());
    let priors = Priors {
        beta_mean: (0..=n_cov).map(|_| r.random::<f64>() - 0.5).collect(),
        beta_var: 0.5 + 3.0 * r.random::<f64>(),
        p_alpha: 0.5 + 2.5 * r.random::<f64>(),
        p_beta: 0.5 + 2.5 * r.random::<f64>(),
    };
    let mut state = ChainState::initial(&chain, &priors).unwrap();
    for i in 0..n {
        let detected = visits[i].contains(&1);
        state.latent.z[i] = detected || r.random::<f64>() < 0.4;
        let a = r.random::<f64>() * 2.0;
        state.latent.a[i] = if state.latent.z[i] { a } else { -a };
        state.f_values[i] = r.random::<f64>() - 0.5;
    }
    state.beta = Coefficients::new((0..=n_cov).map(|_| r.random::<f64>() - 0.5).collect()).unwrap();
    state.p = DetectionParams::new(0.2 + 0.6 * r.random::<f64>()).unwrap();
    Frozen {
        data,
        chain,
        state,
        priors,
    }
}

/// Normalizes log-density values on a grid into cell masses.
pub fn normalize(logd: &[f64]) -> Vec<f64> {
    let m = logd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logd.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Intercept-only posterior with `f = 0` and the given `(beta0, p)` draws.
pub fn fixed_samples(draws: &[(f64, f64)]) -> PosteriorSamples {
    PosteriorSamples {
        learner: LearnerSpec::None,
        config: McmcConfig::default(),
        scaler: CoordScaler::identity(),
        train_site_ids: Vec::new(),
        n_covariates: 0,
        draws: draws
            .iter()
            .map(|&(b, p)| Draw {
                beta: vec![b],
                p,
                surface: FittedSurface::zero(),
                psi: Vec::new(),
                z: Vec::new(),
            })
            .collect(),
        diagnostics: ChainDiagnostics::default(),
    }
}

/// `P(y)` summed over both occupancy states.
pub fn enumerate_likelihood(y: &[u8], psi: f64, p: f64) -> f64 {
    let mut total = 0.0;
    for z in [0.0, 1.0] {
        let mut l = if z == 1.0 { psi } else { 1.0 - psi };
        for &v in y {
            let q = p * z;
            l *= if v == 1 { q } else { 1.0 - q };
        }
        total += l;
    }
    total
}

pub fn direct_moran(v: &[f64], w: &[Vec<f64>]) -> f64 {
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut wsum = 0.0;
    for i in 0..n {
        for j in 0..n {
            num += w[i][j] * (v[i] - mean) * (v[j] - mean);
            wsum += w[i][j];
        }
    }
    let den: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
    n as f64 / wsum * num / den
}


/// Total variation between the Beta conditional for `p` and a grid posterior.
pub fn p_grid_tv(seed: u64) -> f64 {
    let f = frozen_state(seed, 0);
    let (a, b) = p_conditional(&f.state, &f.chain, &f.priors);
    let dist = Beta::new(a, b).unwrap();
    let n_grid = 20_000;
    let grid: Vec<f64> = (0..n_grid).map(|k| (k as f64 + 0.5) / n_grid as f64).collect();
    // likelihood assembled visit by visit over occupied sites
    let brute: Vec<f64> = grid
        .iter()
        .map(|&p| {
            let mut l = (f.priors.p_alpha - 1.0) * p.ln() + (f.priors.p_beta - 1.0) * (1.0 - p).ln();
            for (h, &z) in f.data.histories().iter().zip(&f.state.latent.z) {
                if z {
                    for &y in h.visits() {
                        l += if y == 1 { p.ln() } else { (1.0 - p).ln() };
                    }
                }
            }
            l
        })
        .collect();
    let cand: Vec<f64> = grid.iter().map(|&p| dist.ln_pdf(p)).collect();
    total_variation(&normalize(&brute), &normalize(&cand))
}

/// Total variation between the normal conditional for `beta` and a grid posterior.
pub fn beta_grid_tv(seed: u64, n_cov: usize) -> f64 {
    let f = frozen_state(seed, n_cov);
    let k = n_cov + 1;
    let cond = BetaConditional::new(&f.chain, &f.priors).unwrap();
    let (mean, cov) = cond.moments(&f.state);

    // oracle moments from the normal equations
    let x = &f.chain.design;
    let r: Vec<f64> = f.state.latent.a.iter().zip(&f.state.f_values).map(|(a, fv)| a - fv).collect();
    let v0 = f.priors.beta_var;
    let mut prec = vec![vec![0.0; k]; k];
    let mut rhs = vec![0.0; k];
    for a in 0..k {
        for b in 0..k {
            prec[a][b] = x.iter().map(|row| row[a] * row[b]).sum::<f64>() + if a == b { 1.0 / v0 } else { 0.0 };
        }
        rhs[a] = x.iter().zip(&r).map(|(row, ri)| row[a] * ri).sum::<f64>() + f.priors.beta_mean[a] / v0;
    }
    let mode = gauss_solve(prec.clone(), rhs);
    let sd: Vec<f64> = (0..k)
        .map(|a| {
            let mut e = vec![0.0; k];
            e[a] = 1.0;
            gauss_solve(prec.clone(), e)[a].sqrt()
        })
        .collect();

    let log_post = |b: &[f64]| {
        let mut l = 0.0;
        for (row, ri) in x.iter().zip(&r) {
            let fit: f64 = row.iter().zip(b).map(|(xv, bv)| xv * bv).sum();
            l -= 0.5 * (ri - fit).powi(2);
        }
        for a in 0..k {
            l -= 0.5 * (b[a] - f.priors.beta_mean[a]).powi(2) / v0;
        }
        l
    };
    let inv = cov.clone().try_inverse().unwrap();
    let log_cand = |b: &[f64]| {
        let mut q = 0.0;
        for a in 0..k {
            for c in 0..k {
                q += (b[a] - mean[a]) * inv[(a, c)] * (b[c] - mean[c]);
            }
        }
        -0.5 * q
    };

    let m = if k == 1 { 20_001 } else { 401 };
    let axis = |a: usize, t: usize| mode[a] + sd[a] * (-7.0 + 14.0 * t as f64 / (m - 1) as f64);
    let mut brute = Vec::new();
    let mut cand = Vec::new();
    if k == 1 {
        for t in 0..m {
            let b = [axis(0, t)];
            brute.push(log_post(&b));
            cand.push(log_cand(&b));
        }
    } else {
        for t in 0..m {
            for u in 0..m {
                let b = [axis(0, t), axis(1, u)];
                brute.push(log_post(&b));
                cand.push(log_cand(&b));
            }
        }
    }
    total_variation(&normalize(&brute), &normalize(&cand))
}

/// `P(z = 1 | y = 0)` by summing the joint over both values of `z`.
pub fn enumerate_z(psi: f64, p: f64, j: usize) -> f64 {
    let mut joint = [0.0; 2];
    for z in 0..2 {
        let mut l = if z == 1 { psi } else { 1.0 - psi };
        for _ in 0..j {
            l *= 1.0 - p * z as f64;
        }
        joint[z] = l;
    }
    joint[1] / (joint[0] + joint[1])
}

/// Largest gap between the sampler's `z` probabilities and enumeration over an eta, p, J grid.
pub fn z_enumeration_deviation() -> f64 {
    let etas = [-3.0, -1.2, -0.3, 0.0, 0.4, 1.1, 2.5];
    let ps = [0.01, 0.2, 0.5, 0.77, 0.95];
    let js = [1usize, 2, 3, 5, 10, 46];
    let mut worst = 0.0f64;
    for &eta in &etas {
        for &p in &ps {
            let visits: Vec<Vec<u8>> = js.iter().map(|&j| vec![0u8; j]).collect();
            let coords = uniform_coords(&mut rng(1), js.len());
            let data = dataset(&coords, &visits, None);
            let idx: Vec<usize> = (0..js.len()).collect();
            let chain = ChainData::new(&data, &idx, &CoordScaler::identity());
            let mut st = ChainState::initial(&chain, &Priors::default()).unwrap();
            st.beta = Coefficients::new(vec![eta]).unwrap();
            st.p = DetectionParams::new(p).unwrap();
            let probs = z_conditional(&st, &chain).unwrap();
            let psi = std_normal_cdf(eta);
            for (k, &j) in js.iter().enumerate() {
                let oracle = enumerate_z(psi, p, j);
                worst = worst.max((probs[k] - oracle).abs());
                worst = worst.max((conditional_occupancy_prob(psi, p, j).unwrap() - oracle).abs());
            }
        }
    }
    worst
}

pub fn simulate_constant(seed: u64, n: usize, j: usize, psi: f64, p: f64) -> OccupancyDataset {
    let mut r = rng(seed);
    let coords = uniform_coords(&mut r, n);
    let visits: Vec<Vec<u8>> = (0..n)
        .map(|_| {
            let z = r.random::<f64>() < psi;
            (0..j).map(|_| u8::from(z && r.random::<f64>() < p)).collect()
        })
        .collect();
    dataset(&coords, &visits, None)
}
