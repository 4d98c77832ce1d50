//! Epsilon-insensitive support vector regression with an RBF kernel.
//!
//! The dual is solved by sequential minimal optimization over the stacked
//! variables `(alpha, alpha*)`, using second-order working-set selection.
//! Iteration stops once the maximal KKT violation between the two index sets
//! drops below `tol`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvrParams {
    #[serde(rename = "C", alias = "c")]
    pub c: f64,
    pub epsilon: f64,
    pub rbf_gamma: f64,
    pub tol: f64,
    /// Iteration budget in units of the number of dual variables.
    pub max_passes: usize,
}

impl Default for SvrParams {
    fn default() -> Self {
        SvrParams {
            c: 10.0,
            epsilon: 0.1,
            rbf_gamma: 10.0,
            tol: 1e-4,
            max_passes: 1000,
        }
    }
}

impl SvrParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::invalid("svr C must be positive"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::invalid("svr epsilon must be >= 0"));
        }
        if !(self.rbf_gamma > 0.0) {
            return Err(Error::invalid("svr rbf_gamma must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("svr tol must be positive"));
        }
        if self.max_passes == 0 {
            return Err(Error::invalid("svr max_passes must be >= 1"));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn rbf(gamma: f64, a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (-gamma * (dx * dx + dy * dy)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrSurface {
    pub support: Vec<[f64; 2]>,
    /// `alpha_i - alpha*_i` for each support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
}

impl SvrSurface {
    pub fn predict(&self, s: [f64; 2]) -> f64 {
        let mut acc = 0.0;
        for (sv, c) in self.support.iter().zip(&self.coef) {
            acc += c * rbf(self.gamma, *sv, s);
        }
        acc + self.bias
    }
}

/// Full solver output, including the dual variables of every sample.
#[derive(Debug, Clone)]
pub struct SvrSolution {
    pub alpha: Vec<f64>,
    pub alpha_star: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    /// Dual objective `0.5 c'Kc + eps*sum(alpha+alpha*) - y'c`.
    pub objective: f64,
}

/// Training coordinates with their kernel matrix, reused across fits.
#[derive(Debug, Clone)]
pub struct SvrFitter {
    coords: Vec<[f64; 2]>,
    kernel: Vec<f64>,
    params: SvrParams,
}

impl SvrFitter {
    pub fn new(coords: &[[f64; 2]], params: SvrParams) -> Result<Self> {
        params.validate()?;
        if coords.is_empty() {
            return Err(Error::invalid("svr needs at least one site"));
        }
        let n = coords.len();
        let mut kernel = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                kernel[i * n + j] = rbf(params.rbf_gamma, coords[i], coords[j]);
            }
        }
        Ok(SvrFitter {
            coords: coords.to_vec(),
            kernel,
            params,
        })
    }

    pub fn fit(&self, targets: &[f64]) -> Result<SvrSurface> {
        let sol = self.solve(targets)?;
        Ok(self.surface(&sol))
    }

    /// Surface plus its values at the training sites, sharing kernel entries.
    pub fn fit_with_values(&self, targets: &[f64]) -> Result<(SvrSurface, Vec<f64>)> {
        let sol = self.solve(targets)?;
        let n = self.coords.len();
        let support_idx: Vec<usize> = (0..n)
            .filter(|&i| sol.alpha[i] - sol.alpha_star[i] != 0.0)
            .collect();
        let values = (0..n)
            .map(|k| {
                let mut acc = 0.0;
                for &i in &support_idx {
                    acc += (sol.alpha[i] - sol.alpha_star[i]) * self.kernel[i * n + k];
                }
                acc + sol.bias
            })
            .collect();
        Ok((self.surface(&sol), values))
    }

    fn surface(&self, sol: &SvrSolution) -> SvrSurface {
        let mut support = Vec::new();
        let mut coef = Vec::new();
        for i in 0..self.coords.len() {
            let c = sol.alpha[i] - sol.alpha_star[i];
            if c != 0.0 {
                support.push(self.coords[i]);
                coef.push(c);
            }
        }
        SvrSurface {
            support,
            coef,
            bias: sol.bias,
            gamma: self.params.rbf_gamma,
        }
    }

    pub fn solve(&self, targets: &[f64]) -> Result<SvrSolution> {
        let n = self.coords.len();
        if targets.len() != n {
            return Err(Error::Shape {
                expected: n,
                found: targets.len(),
            });
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("non-finite svr target"));
        }
        let SvrParams {
            c, epsilon, tol, ..
        } = self.params;
        let l = 2 * n;
        let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
        let sample = |t: usize| if t < n { t } else { t - n };
        let k = |a: usize, b: usize| self.kernel[sample(a) * n + sample(b)];

        let mut beta = vec![0.0; l];
        let mut grad: Vec<f64> = (0..l)
            .map(|t| {
                if t < n {
                    epsilon - targets[t]
                } else {
                    epsilon + targets[t - n]
                }
            })
            .collect();

        let max_iter = self.params.max_passes.saturating_mul(l);
        let mut iter = 0;
        loop {
            let in_up = |t: usize, b: &[f64]| {
                (sign(t) > 0.0 && b[t] < c) || (sign(t) < 0.0 && b[t] > 0.0)
            };
            let in_low = |t: usize, b: &[f64]| {
                (sign(t) < 0.0 && b[t] < c) || (sign(t) > 0.0 && b[t] > 0.0)
            };

            let mut gmax = f64::NEG_INFINITY;
            let mut i_sel = None;
            for t in 0..l {
                if in_up(t, &beta) {
                    let v = -sign(t) * grad[t];
                    if v >= gmax {
                        gmax = v;
                        i_sel = Some(t);
                    }
                }
            }
            let mut gmax2 = f64::NEG_INFINITY;
            let mut j_sel = None;
            let mut obj_min = f64::INFINITY;
            if let Some(i) = i_sel {
                let kii = k(i, i);
                for t in 0..l {
                    if !in_low(t, &beta) {
                        continue;
                    }
                    let yg = sign(t) * grad[t];
                    if yg >= gmax2 {
                        gmax2 = yg;
                    }
                    let b_it = gmax + yg;
                    if b_it > 0.0 {
                        let mut a_it = kii + k(t, t) - 2.0 * k(i, t);
                        if a_it <= 0.0 {
                            a_it = TAU;
                        }
                        let val = -(b_it * b_it) / a_it;
                        if val <= obj_min {
                            obj_min = val;
                            j_sel = Some(t);
                        }
                    }
                }
            }

            let violation = gmax + gmax2;
            let (Some(i), Some(j)) = (i_sel, j_sel) else {
                break;
            };
            if violation < tol {
                break;
            }
            if iter >= max_iter {
                return Err(Error::Convergence {
                    iterations: iter,
                    violation,
                });
            }
            iter += 1;

            let (yi, yj) = (sign(i), sign(j));
            let qij = yi * yj * k(i, j);
            let (old_i, old_j) = (beta[i], beta[j]);
            if yi != yj {
                let mut quad = k(i, i) + k(j, j) + 2.0 * qij;
                if quad <= 0.0 {
                    quad = TAU;
                }
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = beta[i] - beta[j];
                beta[i] += delta;
                beta[j] += delta;
                if diff > 0.0 {
                    if beta[j] < 0.0 {
                        beta[j] = 0.0;
                        beta[i] = diff;
                    }
                } else if beta[i] < 0.0 {
                    beta[i] = 0.0;
                    beta[j] = -diff;
                }
                if diff > 0.0 {
                    if beta[i] > c {
                        beta[i] = c;
                        beta[j] = c - diff;
                    }
                } else if beta[j] > c {
                    beta[j] = c;
                    beta[i] = c + diff;
                }
            } else {
                let mut quad = k(i, i) + k(j, j) - 2.0 * qij;
                if quad <= 0.0 {
                    quad = TAU;
                }
                let delta = (grad[i] - grad[j]) / quad;
                let sum = beta[i] + beta[j];
                beta[i] -= delta;
                beta[j] += delta;
                if sum > c {
                    if beta[i] > c {
                        beta[i] = c;
                        beta[j] = sum - c;
                    }
                } else if beta[j] < 0.0 {
                    beta[j] = 0.0;
                    beta[i] = sum;
                }
                if sum > c {
                    if beta[j] > c {
                        beta[j] = c;
                        beta[i] = sum - c;
                    }
                } else if beta[i] < 0.0 {
                    beta[i] = 0.0;
                    beta[j] = sum;
                }
            }

            let di = beta[i] - old_i;
            let dj = beta[j] - old_j;
            for t in 0..l {
                let yt = sign(t);
                grad[t] += yt * (yi * k(i, t) * di + yj * k(j, t) * dj);
            }
        }

        // offset from free variables, or the midpoint of the feasible range
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut sum_free, mut n_free) = (0.0, 0usize);
        for t in 0..l {
            let yg = sign(t) * grad[t];
            if beta[t] >= c {
                if sign(t) < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if beta[t] <= 0.0 {
                if sign(t) > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                n_free += 1;
                sum_free += yg;
            }
        }
        let rho = if n_free > 0 {
            sum_free / n_free as f64
        } else {
            0.5 * (ub + lb)
        };

        let alpha = beta[..n].to_vec();
        let alpha_star = beta[n..].to_vec();
        let objective = 0.5
            * (0..l)
                .map(|t| beta[t] * (grad[t] + if t < n { epsilon - targets[t] } else { epsilon + targets[t - n] }))
                .sum::<f64>();
        Ok(SvrSolution {
            alpha,
            alpha_star,
            bias: -rho,
            iterations: iter,
            objective,
        })
    }
}

pub fn fit_svr(coords: &[[f64; 2]], targets: &[f64], params: SvrParams) -> Result<SvrSurface> {
    SvrFitter::new(coords, params)?.fit(targets)
}
