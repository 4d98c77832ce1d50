mod common;

use common::oracles::*;
use common::{gauss_solve, max_abs_diff, rng, uniform_coords};
use proptest::prelude::*;
use rand::Rng;
use spatial_occupancy::learners::{
    fit_gmrf, fit_lowrank_gp, fit_svr, fit_tree, knot_grid, predict, BoundingBox, GmrfParams,
    GpFitter, GpParams, LearnerSpec, SvrFitter, SvrParams, TreeParams,
};

// ---------- tree ----------

#[test]
fn tree_matches_exhaustive_depth2_on_random_fixtures() {
    for seed in 0..40 {
        let mut r = rng(seed);
        let n = r.random_range(2..=50);
        let coords = uniform_coords(&mut r, n);
        let y: Vec<f64> = coords
            .iter()
            .map(|s| {
                let block = ((s[0] > 0.5) ^ (s[1] > 0.4)) as u8 as f64;
                2.0 * block + 0.3 * r.random::<f64>()
            })
            .collect();
        let got = tree_sse(&coords, &y, depth2_params());
        let want = best_depth2(&coords, &y);
        assert!((got - want).abs() <= 1e-9, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn tree_matches_exhaustive_depth2_with_tied_coordinates() {
    let mut r = rng(99);
    let coords: Vec<[f64; 2]> = (0..36)
        .map(|_| [r.random_range(0..5) as f64 / 4.0, r.random_range(0..5) as f64 / 4.0])
        .collect();
    let y: Vec<f64> = (0..36).map(|_| r.random::<f64>()).collect();
    let got = tree_sse(&coords, &y, depth2_params());
    assert!((got - best_depth2(&coords, &y)).abs() <= 1e-9);
}

#[test]
fn tree_depth1_matches_best_stump() {
    let mut r = rng(5);
    let coords = uniform_coords(&mut r, 30);
    let y: Vec<f64> = (0..30).map(|_| r.random::<f64>()).collect();
    let params = TreeParams {
        max_depth: 1,
        ..depth2_params()
    };
    let idx: Vec<usize> = (0..30).collect();
    let got = tree_sse(&coords, &y, params);
    assert!((got - best_depth1(&coords, &y, &idx)).abs() <= 1e-9);
}

#[test]
fn tree_step_example() {
    let coords = [[0.1, 0.5], [0.2, 0.5], [0.8, 0.5], [0.9, 0.5]];
    let y = [0.0, 0.0, 4.0, 4.0];
    let tree = fit_tree(&coords, &y, TreeParams { min_leaf: 1, ..TreeParams::default() }).unwrap();
    assert_eq!(tree.n_leaves(), 2);
    assert_eq!(tree.predict([0.0, 0.0]), 0.0);
    assert_eq!(tree.predict([1.0, 1.0]), 4.0);
    assert_eq!(tree.predict([0.2, 0.9]), 0.0);
    assert_eq!(tree.predict([0.8, 0.1]), 4.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tree_depth2_optimal(
        pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, -3.0f64..3.0), 1..=50)
    ) {
        let coords: Vec<[f64; 2]> = pts.iter().map(|p| [p.0, p.1]).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.2).collect();
        let got = tree_sse(&coords, &y, depth2_params());
        let want = best_depth2(&coords, &y);
        prop_assert!((got - want).abs() <= 1e-9, "{} vs {}", got, want);
    }
}

// ---------- svr ----------

#[test]
fn svr_solutions_satisfy_kkt() {
    for seed in 0..8 {
        let mut r = rng(100 + seed);
        let n = 40;
        let coords = uniform_coords(&mut r, n);
        let y: Vec<f64> = coords
            .iter()
            .map(|s| (6.0 * s[0]).sin() + s[1] + 0.2 * r.random::<f64>())
            .collect();
        let params = SvrParams::default();
        let sol = SvrFitter::new(&coords, params).unwrap().solve(&y).unwrap();
        let v = svr_kkt_violation(&coords, &y, &sol.alpha, &sol.alpha_star, sol.bias, &params);
        assert!(v <= 1e-4, "seed {seed}: KKT violation {v}");
    }
}

#[test]
fn svr_kkt_with_box_constraints_active() {
    let mut r = rng(7);
    let coords = uniform_coords(&mut r, 30);
    let y: Vec<f64> = (0..30).map(|_| 4.0 * r.random::<f64>() - 2.0).collect();
    let params = SvrParams {
        c: 0.5,
        epsilon: 0.05,
        ..SvrParams::default()
    };
    let sol = SvrFitter::new(&coords, params).unwrap().solve(&y).unwrap();
    assert!(sol.alpha.iter().chain(&sol.alpha_star).any(|&a| a >= params.c - 1e-12));
    let v = svr_kkt_violation(&coords, &y, &sol.alpha, &sol.alpha_star, sol.bias, &params);
    assert!(v <= 1e-4, "KKT violation {v}");
}

#[test]
fn svr_two_point_analytic_dual() {
    let coords = [[0.2, 0.3], [0.6, 0.5]];
    let params = SvrParams {
        c: 1e6,
        epsilon: 0.0,
        rbf_gamma: 10.0,
        tol: 1e-10,
        max_passes: 10_000,
    };
    let k = rbf(params.rbf_gamma, coords[0], coords[1]);
    let theta = 1.0 / (1.0 - k);
    let fitter = SvrFitter::new(&coords, params).unwrap();
    let sol = fitter.solve(&[1.0, -1.0]).unwrap();
    assert!((sol.alpha[0] - sol.alpha_star[0] - theta).abs() < 1e-6);
    assert!((sol.alpha[1] - sol.alpha_star[1] + theta).abs() < 1e-6);
    assert!(sol.bias.abs() < 1e-6);
    assert!((sol.objective + 1.0 / (1.0 - k)).abs() < 1e-6);
    let surf = fit_svr(&coords, &[1.0, -1.0], params).unwrap();
    assert!((surf.predict(coords[0]) - 1.0).abs() < 1e-6);
    assert!((surf.predict(coords[1]) + 1.0).abs() < 1e-6);
}

/// Dual objective in terms of `theta = alpha - alpha*` at complementary optimum.
fn svr_dual_objective(k: &[Vec<f64>], y: &[f64], eps: f64, theta: &[f64]) -> f64 {
    let n = y.len();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            q += theta[i] * k[i][j] * theta[j];
        }
    }
    0.5 * q + eps * theta.iter().map(|t| t.abs()).sum::<f64>() - y.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>()
}

/// Exact dual optimum by enumerating which variables sit at 0, +-C, or are free
/// with a fixed sign, solving each face's equality-constrained quadratic.
fn svr_dual_by_faces(coords: &[[f64; 2]], y: &[f64], p: &SvrParams) -> f64 {
    let n = y.len();
    let k: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| rbf(p.rbf_gamma, coords[i], coords[j])).collect())
        .collect();
    let mut best = f64::INFINITY;
    let n_patterns = 5usize.pow(n as u32);
    for code in 0..n_patterns {
        let mut status = Vec::with_capacity(n);
        let mut c = code;
        for _ in 0..n {
            status.push(c % 5);
            c /= 5;
        }
        // 0: zero, 1: +C, 2: -C, 3: free positive, 4: free negative
        let mut theta = vec![0.0; n];
        let free: Vec<usize> = (0..n).filter(|&i| status[i] >= 3).collect();
        for i in 0..n {
            theta[i] = match status[i] {
                1 => p.c,
                2 => -p.c,
                _ => 0.0,
            };
        }
        let fixed_sum: f64 = theta.iter().sum();
        if free.is_empty() {
            if fixed_sum.abs() > 1e-12 {
                continue;
            }
        } else {
            // stationarity on free vars with a multiplier for sum(theta) = 0
            let m = free.len();
            let mut a = vec![vec![0.0; m + 1]; m + 1];
            let mut b = vec![0.0; m + 1];
            for (r, &i) in free.iter().enumerate() {
                for (cc, &j) in free.iter().enumerate() {
                    a[r][cc] = k[i][j];
                }
                a[r][m] = 1.0;
                let sign = if status[i] == 3 { 1.0 } else { -1.0 };
                let fixed_part: f64 = (0..n).filter(|j| status[*j] < 3).map(|j| k[i][j] * theta[j]).sum();
                b[r] = y[i] - p.epsilon * sign - fixed_part;
                a[m][r] = 1.0;
            }
            b[m] = -fixed_sum;
            let x = gauss_solve(a, b);
            let mut ok = true;
            for (r, &i) in free.iter().enumerate() {
                let v = x[r];
                let feasible = if status[i] == 3 { v > 0.0 && v < p.c } else { v < 0.0 && v > -p.c };
                ok &= feasible;
                theta[i] = v;
            }
            if !ok {
                continue;
            }
        }
        best = best.min(svr_dual_objective(&k, y, p.epsilon, &theta));
    }
    best
}

#[test]
fn svr_small_instances_match_exact_dual_objective() {
    let params = SvrParams {
        c: 2.0,
        epsilon: 0.1,
        rbf_gamma: 3.0,
        tol: 1e-8,
        max_passes: 10_000,
    };
    let mut r = rng(11);
    for n in [2usize, 3, 3, 3] {
        let coords = uniform_coords(&mut r, n);
        let y: Vec<f64> = (0..n).map(|_| 4.0 * r.random::<f64>() - 2.0).collect();
        let sol = SvrFitter::new(&coords, params).unwrap().solve(&y).unwrap();
        let oracle = svr_dual_by_faces(&coords, &y, &params);
        assert!((sol.objective - oracle).abs() <= 1e-6, "n={n}: {} vs {oracle}", sol.objective);
        let theta: Vec<f64> = sol.alpha.iter().zip(&sol.alpha_star).map(|(a, b)| a - b).collect();
        let k: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| rbf(params.rbf_gamma, coords[i], coords[j])).collect())
            .collect();
        assert!((svr_dual_objective(&k, &y, params.epsilon, &theta) - oracle).abs() <= 1e-6);
    }
}

#[test]
fn svr_flat_targets_inside_tube() {
    let mut r = rng(3);
    let coords = uniform_coords(&mut r, 20);
    let surf = fit_svr(&coords, &[1.25; 20], SvrParams::default()).unwrap();
    assert!(surf.coef.iter().all(|c| *c == 0.0));
    assert!((surf.bias - 1.25).abs() < 1e-12);
    assert!((surf.predict([5.0, -3.0]) - 1.25).abs() < 1e-12);
}

// ---------- low-rank GP ----------

#[test]
fn gp_matches_dense_normal_equations() {
    for seed in 0..4 {
        let mut r = rng(200 + seed);
        let coords = uniform_coords(&mut r, 200);
        let y: Vec<f64> = coords
            .iter()
            .map(|s| 1.5 * (6.0 * s[0]).cos() * (4.0 * s[1]).sin() + r.random::<f64>() - 0.5)
            .collect();
        let params = GpParams::default();
        let surf = fit_lowrank_gp(&coords, &y, params).unwrap();
        let bbox = BoundingBox::of(&coords);
        let phi = 0.3 * bbox.diagonal();
        assert!((surf.range_phi - phi).abs() < 1e-15);
        assert_eq!(surf.knots.len(), 100);

        let w = gp_oracle(&coords, &y, &surf.knots, phi, params.sill_sigma2, params.nugget_tau2);
        let fitted: Vec<f64> = coords.iter().map(|s| surf.predict(*s)).collect();
        let oracle_fit: Vec<f64> = coords
            .iter()
            .map(|s| surf.knots.iter().zip(&w).map(|(kn, wj)| wj * expcov(params.sill_sigma2, phi, *s, *kn)).sum())
            .collect();
        let d = max_abs_diff(&fitted, &oracle_fit);
        assert!(d <= 1e-8, "seed {seed}: fitted values differ by {d}");
        let scale = w.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let dw = max_abs_diff(&surf.weights, &w);
        assert!(dw <= 1e-8 * scale, "seed {seed}: weights differ by {dw}");
    }
}

#[test]
fn gp_knots_form_regular_grid_over_bbox() {
    let bbox = BoundingBox {
        min: [0.0, 2.0],
        max: [4.0, 4.0],
    };
    let knots = knot_grid(&bbox, 4);
    assert_eq!(knots, vec![[1.0, 2.5], [3.0, 2.5], [1.0, 3.5], [3.0, 3.5]]);
}

#[test]
fn gp_zero_targets_and_single_site_shrinkage() {
    let mut r = rng(4);
    let coords = uniform_coords(&mut r, 25);
    let surf = fit_lowrank_gp(&coords, &[0.0; 25], GpParams::default()).unwrap();
    assert!(surf.weights.iter().all(|w| *w == 0.0));
    assert_eq!(surf.predict([0.3, 0.3]), 0.0);

    let one = [[0.4, 0.6]];
    let t = 2.0;
    let surf = fit_lowrank_gp(&one, &[t], GpParams::default()).unwrap();
    let f = surf.predict(one[0]);
    assert!(f.abs() < t.abs() && f > 0.0, "f = {f}");
}

#[test]
fn gp_interpolates_at_knots_with_large_sill_and_no_nugget() {
    let coords: Vec<[f64; 2]> = (0..9).map(|i| [(i % 3) as f64 * 0.5, (i / 3) as f64 * 0.5]).collect();
    let y = [0.3, -1.0, 2.0, 0.5, 0.0, -0.7, 1.1, 0.9, -2.0];
    let fitter = GpFitter::with_knots(&coords, coords.clone(), 0.4, 100.0, 0.0).unwrap();
    let surf = fitter.fit(&y).unwrap();
    for (s, t) in coords.iter().zip(&y) {
        assert!((surf.predict(*s) - t).abs() < 1e-8);
    }
}

#[test]
fn gp_coincident_knots_rejected() {
    let coords = [[0.1, 0.2], [0.5, 0.5], [0.9, 0.1]];
    let knots = vec![[0.5, 0.5], [0.5, 0.5]];
    assert!(GpFitter::with_knots(&coords, knots, 0.3, 1.0, 0.0).is_err());
}

// ---------- GMRF ----------

#[test]
fn gmrf_matches_dense_solve() {
    let grids = [(15, 15), (20, 20), (7, 12), (20, 3)];
    for (g, &(nx, ny)) in grids.iter().enumerate() {
        let mut r = rng(300 + g as u64);
        let coords: Vec<[f64; 2]> = (0..150).map(|_| [r.random::<f64>() * 3.0, r.random::<f64>() * 2.0 - 1.0]).collect();
        let y: Vec<f64> = coords.iter().map(|s| s[0].sin() + s[1] + r.random::<f64>() - 0.5).collect();
        let params = GmrfParams {
            grid_nx: nx,
            grid_ny: ny,
            ..GmrfParams::default()
        };
        let surf = fit_gmrf(&coords, &y, params).unwrap();
        let bbox = BoundingBox::of(&coords);
        let cell = [(bbox.max[0] - bbox.min[0]) / nx as f64, (bbox.max[1] - bbox.min[1]) / ny as f64];
        assert!(max_abs_diff(&surf.lattice.origin, &bbox.min) < 1e-15);
        assert!(max_abs_diff(&surf.lattice.cell_size, &cell) < 1e-15);
        let u = gmrf_oracle(&coords, &y, bbox.min, cell, nx, ny, &params);
        let d = max_abs_diff(&surf.effects, &u);
        assert!(d <= 1e-8, "{nx}x{ny}: {d}");
    }
}

#[test]
fn gmrf_single_cell_on_3x3() {
    let params = GmrfParams {
        grid_nx: 3,
        grid_ny: 3,
        ..GmrfParams::default()
    };
    let t = 2.0;
    let coords = [[0.5, 0.5]];
    let surf = fit_gmrf(&coords, &[t], params).unwrap();
    let u = gmrf_oracle(&coords, &[t], surf.lattice.origin, surf.lattice.cell_size, 3, 3, &params);
    assert!(max_abs_diff(&surf.effects, &u) <= 1e-12);
    let e = &surf.effects;
    let centre = e[4];
    assert!(centre > 0.0 && centre < t);
    for (i, v) in e.iter().enumerate() {
        if i != 4 {
            assert!(*v > 0.0 && *v < centre);
        }
    }
    for edge in [1, 3, 5, 7] {
        for corner in [0, 2, 6, 8] {
            assert!(e[edge] > e[corner]);
        }
    }
}

#[test]
fn gmrf_zero_targets_and_clamped_prediction() {
    let mut r = rng(8);
    let coords = uniform_coords(&mut r, 30);
    let surf = fit_gmrf(&coords, &[0.0; 30], GmrfParams::default()).unwrap();
    assert!(surf.effects.iter().all(|u| *u == 0.0));

    let y: Vec<f64> = coords.iter().map(|s| s[0]).collect();
    let surf = fit_gmrf(&coords, &y, GmrfParams::default()).unwrap();
    let nx = surf.lattice.nx;
    assert_eq!(surf.predict([-10.0, -10.0]), surf.effects[0]);
    assert_eq!(surf.predict([10.0, -10.0]), surf.effects[nx - 1]);
    assert_eq!(surf.predict([10.0, 10.0]), *surf.effects.last().unwrap());
}

#[test]
fn gmrf_rejects_rho_one() {
    let params = GmrfParams {
        rho: 1.0,
        ..GmrfParams::default()
    };
    assert!(fit_gmrf(&[[0.0, 0.0], [1.0, 1.0]], &[0.0, 1.0], params).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gmrf_invariant_to_site_order(
        pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, -2.0f64..2.0), 2..60),
        rot in 0usize..60,
    ) {
        let coords: Vec<[f64; 2]> = pts.iter().map(|p| [p.0, p.1]).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.2).collect();
        let n = coords.len();
        let k = rot % n;
        let mut order: Vec<usize> = (0..n).rev().collect();
        order.rotate_left(k);
        let c2: Vec<[f64; 2]> = order.iter().map(|&i| coords[i]).collect();
        let y2: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        let a = fit_gmrf(&coords, &y, GmrfParams::default()).unwrap();
        let b = fit_gmrf(&c2, &y2, GmrfParams::default()).unwrap();
        prop_assert_eq!(a.lattice, b.lattice);
        prop_assert!(max_abs_diff(&a.effects, &b.effects) <= 1e-12);
    }

    #[test]
    fn fitted_values_do_not_amplify_targets(
        pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, -3.0f64..3.0), 1..80),
    ) {
        let coords: Vec<[f64; 2]> = pts.iter().map(|p| [p.0, p.1]).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.2).collect();
        let ymax = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for name in ["tree", "svr", "gp", "gmrf", "none"] {
            let spec = LearnerSpec::from_name(name).unwrap();
            let surf = spec.fit(&coords, &y).unwrap();
            let f = predict(&surf, &coords).unwrap();
            prop_assert!(f.iter().all(|v| v.is_finite()));
            let mean_abs = f.iter().map(|v| v.abs()).sum::<f64>() / f.len() as f64;
            prop_assert!(mean_abs <= ymax + 1e-9, "{}: {} > {}", name, mean_abs, ymax);
            let far = predict(&surf, &[[-50.0, 80.0], [1e6, -1e6]]).unwrap();
            prop_assert!(far.iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn fits_are_bit_identical_across_runs() {
    let mut r = rng(12);
    let coords = uniform_coords(&mut r, 120);
    let y: Vec<f64> = coords.iter().map(|s| (s[0] - s[1]) * 2.0 + r.random::<f64>()).collect();
    for name in ["tree", "svr", "gp", "gmrf", "none"] {
        let spec = LearnerSpec::from_name(name).unwrap();
        let a = spec.fit(&coords, &y).unwrap();
        let b = spec.fit(&coords, &y).unwrap();
        assert_eq!(a, b, "{name}");
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let fitter = spec.prepare(&coords).unwrap();
        let (c, values) = fitter.fit(&y).unwrap();
        assert_eq!(a, c, "{name}");
        assert_eq!(values, predict(&a, &coords).unwrap(), "{name}");
    }
}
