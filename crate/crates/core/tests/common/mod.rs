#![allow(dead_code)]

pub mod oracles;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_coords(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 2]> {
    (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect()
}

/// Dense solve by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        assert!(d.abs() > 1e-300, "singular oracle system");
        for row in col + 1..n {
            let factor = a[row][col] / d;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[i][k] * x[k];
        }
        x[i] = s / a[i][i];
    }
    x
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

use spatial_occupancy::model::{DetectionHistory, OccupancyDataset, Role, Site};

/// Dataset with every site in the training role.
pub fn dataset(coords: &[[f64; 2]], visits: &[Vec<u8>], covariates: Option<Vec<Vec<f64>>>) -> OccupancyDataset {
    let sites = coords
        .iter()
        .enumerate()
        .map(|(i, s)| Site::new(format!("s{i:03}"), s[0], s[1]).unwrap())
        .collect();
    let hist = visits
        .iter()
        .enumerate()
        .map(|(i, v)| DetectionHistory::new(format!("s{i:03}"), v.clone()).unwrap())
        .collect();
    OccupancyDataset::new(sites, hist, covariates, vec![Role::Train; coords.len()]).unwrap()
}

/// Gazelle-shaped survey: 195 sites in projected units, 1 to 46 visits, two covariates.
pub fn write_gazelle_fixture(dir: &Path) {
    let mut r = rng(195);
    let mut sites = String::from("site_id,x,y,elev,grass\n");
    let mut det = String::from("site_id,visit,y\n");
    for i in 0..195 {
        sites.push_str(&format!(
            "G{i:03},{:.3},{:.3},{:.1},{:.4}\n",
            700_000.0 + 40_000.0 * r.random::<f64>(),
            9_700_000.0 + 60_000.0 * r.random::<f64>(),
            1500.0 + 400.0 * r.random::<f64>(),
            r.random::<f64>()
        ));
        let j = match i {
            0 => 1,
            1 => 46,
            _ => r.random_range(1..=46),
        };
        for v in 1..=j {
            det.push_str(&format!("G{i:03},{v},{}\n", u8::from(r.random::<f64>() < 0.25)));
        }
    }
    fs::write(dir.join("sites.csv"), sites).unwrap();
    fs::write(dir.join("detections.csv"), det).unwrap();
}

/// Every file under `dir` with its bytes.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}
