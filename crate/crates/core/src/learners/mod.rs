//! Spatial regressors that approximate the occupancy surface `f(s)`.
//!
//! Every learner follows the same two-step protocol: [`LearnerSpec::prepare`]
//! does the work that depends only on site locations (sort orders, kernel
//! and basis matrices, factorized precisions), and [`Fitter::fit`] maps a
//! target vector to a [`FittedSurface`]. Fits are deterministic.

pub mod gmrf;
pub mod lowrank_gp;
pub mod svr;
pub mod tree;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gmrf::{fit_gmrf, GmrfFitter, GmrfParams, GmrfSurface, Lattice};
pub use lowrank_gp::{fit_lowrank_gp, knot_grid, GpFitter, GpParams, GpSurface};
pub use svr::{fit_svr, SvrFitter, SvrParams, SvrSolution, SvrSurface};
pub use tree::{fit_tree, RegressionTree, TreeFitter, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl BoundingBox {
    /// Smallest box containing all points. Panics on an empty slice.
    pub fn of(points: &[[f64; 2]]) -> Self {
        assert!(!points.is_empty(), "bounding box of no points");
        let mut min = points[0];
        let mut max = points[0];
        for p in &points[1..] {
            for d in 0..2 {
                min[d] = min[d].min(p[d]);
                max[d] = max[d].max(p[d]);
            }
        }
        BoundingBox { min, max }
    }

    pub fn width(&self) -> [f64; 2] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1]]
    }

    pub fn diagonal(&self) -> f64 {
        let [w, h] = self.width();
        (w * w + h * h).sqrt()
    }

    /// Lower corner and widths, with zero-width sides widened to 1 around
    /// their centre.
    pub fn padded_extent(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = self.min;
        let mut width = self.width();
        for d in 0..2 {
            if !(width[d] > 1e-12) {
                lo[d] -= 0.5;
                width[d] = 1.0;
            }
        }
        (lo, width)
    }
}

/// Affine map sending the training bounding box into the unit square while
/// keeping the aspect ratio (the longer side spans `[0, 1]`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordScaler {
    pub origin: [f64; 2],
    pub scale: f64,
}

impl CoordScaler {
    pub fn identity() -> Self {
        CoordScaler {
            origin: [0.0, 0.0],
            scale: 1.0,
        }
    }

    pub fn fit(points: &[[f64; 2]]) -> Self {
        let bb = BoundingBox::of(points);
        let [w, h] = bb.width();
        let longest = w.max(h);
        CoordScaler {
            origin: bb.min,
            scale: if longest > 0.0 { longest } else { 1.0 },
        }
    }

    pub fn apply(&self, s: [f64; 2]) -> [f64; 2] {
        [
            (s[0] - self.origin[0]) / self.scale,
            (s[1] - self.origin[1]) / self.scale,
        ]
    }

    pub fn apply_all(&self, points: &[[f64; 2]]) -> Vec<[f64; 2]> {
        points.iter().map(|s| self.apply(*s)).collect()
    }
}

/// Which regressor approximates `f`, with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    Tree(TreeParams),
    Svr(SvrParams),
    #[serde(alias = "gp")]
    LowrankGp(GpParams),
    Gmrf(GmrfParams),
    /// Nonspatial model: `f` is identically zero.
    None,
}

impl LearnerSpec {
    /// Default-configured learner by its short name.
    pub fn from_name(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "tree" => Ok(LearnerSpec::Tree(TreeParams::default())),
            "svr" => Ok(LearnerSpec::Svr(SvrParams::default())),
            "gp" | "lowrank_gp" => Ok(LearnerSpec::LowrankGp(GpParams::default())),
            "gmrf" => Ok(LearnerSpec::Gmrf(GmrfParams::default())),
            "none" => Ok(LearnerSpec::None),
            other => Err(Error::invalid(format!("unknown learner {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LearnerSpec::Tree(_) => "tree",
            LearnerSpec::Svr(_) => "svr",
            LearnerSpec::LowrankGp(_) => "gp",
            LearnerSpec::Gmrf(_) => "gmrf",
            LearnerSpec::None => "none",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LearnerSpec::Tree(p) => p.validate(),
            LearnerSpec::Svr(p) => p.validate(),
            LearnerSpec::LowrankGp(p) => p.validate(),
            LearnerSpec::Gmrf(p) => p.validate(),
            LearnerSpec::None => Ok(()),
        }
    }

    pub fn prepare(&self, coords: &[[f64; 2]]) -> Result<Fitter> {
        if coords.is_empty() {
            return Err(Error::invalid("learner needs at least one site"));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite site coordinates"));
        }
        let bbox = BoundingBox::of(coords);
        let inner = match self {
            LearnerSpec::Tree(p) => FitterKind::Tree(TreeFitter::new(coords, *p)?),
            LearnerSpec::Svr(p) => FitterKind::Svr(SvrFitter::new(coords, *p)?),
            LearnerSpec::LowrankGp(p) => FitterKind::Gp(GpFitter::new(coords, *p)?),
            LearnerSpec::Gmrf(p) => FitterKind::Gmrf(GmrfFitter::new(coords, *p)?),
            LearnerSpec::None => FitterKind::Zero,
        };
        Ok(Fitter {
            bbox,
            n: coords.len(),
            inner,
        })
    }

    pub fn fit(&self, coords: &[[f64; 2]], targets: &[f64]) -> Result<FittedSurface> {
        Ok(self.prepare(coords)?.fit(targets)?.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurfaceModel {
    Zero,
    Tree(RegressionTree),
    Svr(SvrSurface),
    LowrankGp(GpSurface),
    Gmrf(GmrfSurface),
}

/// A fitted `f`, evaluable anywhere. `bbox` is the training bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedSurface {
    pub bbox: Option<BoundingBox>,
    pub model: SurfaceModel,
}

impl FittedSurface {
    pub fn zero() -> Self {
        FittedSurface {
            bbox: None,
            model: SurfaceModel::Zero,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.model {
            SurfaceModel::Zero => "none",
            SurfaceModel::Tree(_) => "tree",
            SurfaceModel::Svr(_) => "svr",
            SurfaceModel::LowrankGp(_) => "gp",
            SurfaceModel::Gmrf(_) => "gmrf",
        }
    }

    /// Value of `f` at `s`. Trees and lattices extrapolate by clamping; the
    /// kernel learners decay towards their offset away from the data.
    pub fn predict_one(&self, s: [f64; 2]) -> f64 {
        match &self.model {
            SurfaceModel::Zero => 0.0,
            SurfaceModel::Tree(t) => t.predict(s),
            SurfaceModel::Svr(m) => m.predict(s),
            SurfaceModel::LowrankGp(m) => m.predict(s),
            SurfaceModel::Gmrf(m) => m.predict(s),
        }
    }
}

pub fn predict(surface: &FittedSurface, coords: &[[f64; 2]]) -> Result<Vec<f64>> {
    if coords.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite prediction coordinates"));
    }
    Ok(coords.iter().map(|s| surface.predict_one(*s)).collect())
}

#[derive(Debug, Clone)]
enum FitterKind {
    Zero,
    Tree(TreeFitter),
    Svr(SvrFitter),
    Gp(GpFitter),
    Gmrf(GmrfFitter),
}

/// A learner bound to a fixed set of site locations.
#[derive(Debug, Clone)]
pub struct Fitter {
    bbox: BoundingBox,
    n: usize,
    inner: FitterKind,
}

impl Fitter {
    pub fn n_sites(&self) -> usize {
        self.n
    }

    /// Fits `targets` and returns the surface with its values at the sites.
    ///
    /// The returned values are bit-identical to `predict(surface, coords)`.
    pub fn fit(&self, targets: &[f64]) -> Result<(FittedSurface, Vec<f64>)> {
        if targets.len() != self.n {
            return Err(Error::Shape {
                expected: self.n,
                found: targets.len(),
            });
        }
        let (model, values) = match &self.inner {
            FitterKind::Zero => (SurfaceModel::Zero, vec![0.0; self.n]),
            FitterKind::Tree(f) => {
                let tree = f.fit(targets)?;
                let values = f.coords().iter().map(|s| tree.predict(*s)).collect();
                (SurfaceModel::Tree(tree), values)
            }
            FitterKind::Svr(f) => {
                let (m, v) = f.fit_with_values(targets)?;
                (SurfaceModel::Svr(m), v)
            }
            FitterKind::Gp(f) => {
                let (m, v) = f.fit_with_values(targets)?;
                (SurfaceModel::LowrankGp(m), v)
            }
            FitterKind::Gmrf(f) => {
                let (m, v) = f.fit_with_values(targets)?;
                (SurfaceModel::Gmrf(m), v)
            }
        };
        let bbox = match model {
            SurfaceModel::Zero => None,
            _ => Some(self.bbox),
        };
        Ok((FittedSurface { bbox, model }, values))
    }
}
