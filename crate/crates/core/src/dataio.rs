//! Text formats: dataset CSVs, run configuration JSON and fit outputs.
//!
//! Sites: `site_id,x,y[,cov1..covq]`. Detections: `site_id,visit,y` with one
//! row per visit; histories are ordered by `visit`. Split: `site_id,role`
//! with role `train` or `holdout`. Missing values in output tables are `NA`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{BoundingBox, LearnerSpec};
use crate::model::{DetectionHistory, OccupancyDataset, Role, Site};
use crate::sampler::{McmcConfig, PosteriorSamples};
use crate::scoring::{quantile_sorted, Correlogram, CorrelogramBin, ScoreReport};

pub const SITES_FILE: &str = "sites.csv";
pub const DETECTIONS_FILE: &str = "detections.csv";
pub const SPLIT_FILE: &str = "split.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const DRAWS_FILE: &str = "draws.json";
pub const RASTER_FILE: &str = "psi_raster.csv";
pub const SCORE_FILE: &str = "score.json";
pub const CORRELOGRAM_FILE: &str = "correlogram.csv";
pub const CORRELOGRAM_META_FILE: &str = "correlogram.json";
pub const SUMMARY_FILE: &str = "posterior_summary.csv";
pub const WARNINGS_FILE: &str = "warnings.json";

pub const RESIDUAL_DEFINITION: &str =
    "r_i = 1[any detection at i] - posterior mean of psi_i * (1 - (1 - p)^J_i)";

/// Which sites a correlogram is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SiteSet {
    #[default]
    Train,
    Holdout,
    All,
}

impl SiteSet {
    pub fn indices(self, data: &OccupancyDataset) -> Vec<usize> {
        match self {
            SiteSet::Train => data.train_indices(),
            SiteSet::Holdout => data.holdout_indices(),
            SiteSet::All => (0..data.len()).collect(),
        }
    }
}

impl std::str::FromStr for SiteSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SiteSet::Train),
            "holdout" => Ok(SiteSet::Holdout),
            "all" => Ok(SiteSet::All),
            other => Err(Error::invalid(format!(
                "site set {other:?}; expected train, holdout or all"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub n_bins: usize,
    /// Explicit bin edges; overrides `n_bins`.
    pub bins: Option<Vec<f64>>,
    pub n_perm: usize,
    pub seed: u64,
    pub residual_sites: SiteSet,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            n_bins: 10,
            bins: None,
            n_perm: 199,
            seed: 1,
            residual_sites: SiteSet::Train,
        }
    }
}

/// Holdout assignment. At most one of the three sources may be set; with
/// none, every site is used for training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub holdout_file: Option<PathBuf>,
    pub holdout_ids: Option<Vec<String>>,
    pub fraction: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RasterConfig {
    pub nx: usize,
    pub ny: usize,
}

impl Default for RasterConfig {
    fn default() -> Self {
        RasterConfig { nx: 30, ny: 30 }
    }
}

fn default_learner() -> LearnerSpec {
    LearnerSpec::None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub sites: PathBuf,
    pub detections: PathBuf,
    #[serde(default = "default_learner")]
    pub learner: LearnerSpec,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub mcmc: McmcConfig,
    #[serde(default)]
    pub scoring: ScoringConfig,
    #[serde(default)]
    pub split: SplitSpec,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub raster: RasterConfig,
}

impl RunConfig {
    /// Reads a config and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.sites);
        fix(&mut self.detections);
        fix(&mut self.output_dir);
        if let Some(h) = &mut self.split.holdout_file {
            fix(h);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.learner.validate()?;
        self.mcmc.validate()?;
        for p in [&self.sites, &self.detections] {
            if !p.is_file() {
                return Err(Error::invalid(format!("{} does not exist", p.display())));
            }
        }
        if let Some(h) = &self.split.holdout_file {
            if !h.is_file() {
                return Err(Error::invalid(format!("{} does not exist", h.display())));
            }
        }
        let sources = usize::from(self.split.holdout_file.is_some())
            + usize::from(self.split.holdout_ids.is_some())
            + usize::from(self.split.fraction.is_some());
        if sources > 1 {
            return Err(Error::invalid(
                "split: set only one of holdout_file, holdout_ids, fraction",
            ));
        }
        if let Some(f) = self.split.fraction {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::invalid("split fraction must lie in [0,1)"));
            }
        }
        if self.scoring.n_perm == 0 {
            return Err(Error::invalid("scoring n_perm must be >= 1"));
        }
        if self.scoring.bins.is_none() && self.scoring.n_bins < 2 {
            return Err(Error::invalid("scoring needs at least two bins"));
        }
        if self.raster.nx == 0 || self.raster.ny == 0 {
            return Err(Error::invalid("raster dimensions must be positive"));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| self.learner.name().to_string())
    }
}

fn load_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        line: line as usize,
        message: message.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn expect_header(path: &Path, headers: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = headers.iter().take(expected.len()).collect();
    if got != expected {
        return Err(load_err(
            path,
            1,
            format!("header must start with {}, found {}", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn parse_f64(path: &Path, line: u64, field: &str, text: &str) -> Result<f64> {
    let v: f64 = text
        .parse()
        .map_err(|_| load_err(path, line, format!("{field} {text:?} is not a number")))?;
    if !v.is_finite() {
        return Err(load_err(path, line, format!("{field} must be finite")));
    }
    Ok(v)
}

/// Covariate column names of a sites file.
pub fn covariate_names(sites_path: &Path) -> Result<Vec<String>> {
    let mut rdr = reader(sites_path)?;
    let headers = rdr.headers()?.clone();
    expect_header(sites_path, &headers, &["site_id", "x", "y"])?;
    Ok(headers.iter().skip(3).map(str::to_string).collect())
}

/// Loads sites and detections; every site is marked for training.
pub fn load_dataset(sites_path: &Path, detections_path: &Path) -> Result<OccupancyDataset> {
    let mut rdr = reader(sites_path)?;
    let headers = rdr.headers()?.clone();
    expect_header(sites_path, &headers, &["site_id", "x", "y"])?;
    let names: Vec<String> = headers.iter().skip(3).map(str::to_string).collect();
    let mut sites = Vec::new();
    let mut covs = Vec::new();
    let mut index = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 3 + names.len() {
            return Err(load_err(
                sites_path,
                line,
                format!("expected {} fields, found {}", 3 + names.len(), rec.len()),
            ));
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(load_err(sites_path, line, "empty site_id"));
        }
        let x = parse_f64(sites_path, line, "x", &rec[1])?;
        let y = parse_f64(sites_path, line, "y", &rec[2])?;
        let row = names
            .iter()
            .enumerate()
            .map(|(k, name)| parse_f64(sites_path, line, name, &rec[3 + k]))
            .collect::<Result<Vec<f64>>>()?;
        if index.insert(id.clone(), sites.len()).is_some() {
            return Err(load_err(sites_path, line, format!("duplicate site_id {id}")));
        }
        sites.push(Site::new(id, x, y)?);
        covs.push(row);
    }

    let mut visits: Vec<BTreeMap<i64, u8>> = vec![BTreeMap::new(); sites.len()];
    let mut rdr = reader(detections_path)?;
    let headers = rdr.headers()?.clone();
    expect_header(detections_path, &headers, &["site_id", "visit", "y"])?;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 3 {
            return Err(load_err(detections_path, line, "expected site_id,visit,y"));
        }
        let id = &rec[0];
        let &i = index.get(id).ok_or_else(|| {
            load_err(detections_path, line, format!("unknown site_id {id}"))
        })?;
        let visit: i64 = rec[1].parse().map_err(|_| {
            load_err(detections_path, line, format!("visit {:?} is not an integer", &rec[1]))
        })?;
        let y = match &rec[2] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(load_err(
                    detections_path,
                    line,
                    format!("y must be 0 or 1, found {other:?}"),
                ))
            }
        };
        if visits[i].insert(visit, y).is_some() {
            return Err(load_err(
                detections_path,
                line,
                format!("duplicate visit {visit} for site {id}"),
            ));
        }
    }

    let mut histories = Vec::with_capacity(sites.len());
    for (site, v) in sites.iter().zip(visits) {
        if v.is_empty() {
            return Err(load_err(
                detections_path,
                0,
                format!("site {} has no visits", site.id),
            ));
        }
        histories.push(DetectionHistory::new(site.id.clone(), v.into_values().collect())?);
    }
    let n = sites.len();
    if n == 0 {
        return Err(load_err(sites_path, 1, "no sites"));
    }
    let covariates = (!names.is_empty()).then_some(covs);
    OccupancyDataset::new(sites, histories, covariates, vec![Role::Train; n])
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().from_writer(file))
}

fn finish(w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .sync_all()
        .map_err(|e| Error::io(path, e))
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), num)
}

/// Writes `sites.csv`, `detections.csv` and `split.csv` into `dir`.
pub fn write_dataset(
    data: &OccupancyDataset,
    dir: &Path,
    covariate_names: Option<&[String]>,
) -> Result<()> {
    let q = data.n_covariates();
    let names: Vec<String> = match covariate_names {
        Some(n) if n.len() == q => n.to_vec(),
        Some(n) => {
            return Err(Error::Shape {
                expected: q,
                found: n.len(),
            })
        }
        None => (1..=q).map(|k| format!("cov{k}")).collect(),
    };
    let path = dir.join(SITES_FILE);
    let mut w = writer(&path)?;
    let mut header = vec!["site_id".to_string(), "x".into(), "y".into()];
    header.extend(names);
    w.write_record(&header)?;
    for (i, s) in data.sites().iter().enumerate() {
        let mut row = vec![s.id.clone(), num(s.coords[0]), num(s.coords[1])];
        if let Some(c) = data.covariates() {
            row.extend(c[i].iter().map(|v| num(*v)));
        }
        w.write_record(&row)?;
    }
    finish(w, &path)?;

    let path = dir.join(DETECTIONS_FILE);
    let mut w = writer(&path)?;
    w.write_record(["site_id", "visit", "y"])?;
    for h in data.histories() {
        for (j, y) in h.visits().iter().enumerate() {
            w.write_record([h.site_id.as_str(), &(j + 1).to_string(), &y.to_string()])?;
        }
    }
    finish(w, &path)?;
    write_split(data, &dir.join(SPLIT_FILE))
}

pub fn write_split(data: &OccupancyDataset, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["site_id", "role"])?;
    for (s, r) in data.sites().iter().zip(data.roles()) {
        let role = match r {
            Role::Train => "train",
            Role::Holdout => "holdout",
        };
        w.write_record([s.id.as_str(), role])?;
    }
    finish(w, path)
}

/// Reads a `site_id,role` file.
pub fn read_split(path: &Path) -> Result<HashMap<String, Role>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    expect_header(path, &headers, &["site_id", "role"])?;
    let mut out = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let role = match rec.get(1) {
            Some("train") => Role::Train,
            Some("holdout") => Role::Holdout,
            other => {
                return Err(load_err(path, line, format!("role {other:?}; expected train or holdout")))
            }
        };
        if out.insert(rec[0].to_string(), role).is_some() {
            return Err(load_err(path, line, format!("duplicate site_id {}", &rec[0])));
        }
    }
    Ok(out)
}

/// Assigns roles by site id; unlisted sites train, unknown ids are errors.
pub fn assign_roles(
    data: OccupancyDataset,
    roles: &HashMap<String, Role>,
) -> Result<OccupancyDataset> {
    let known: HashSet<&str> = data.sites().iter().map(|s| s.id.as_str()).collect();
    let mut unknown: Vec<&String> = roles.keys().filter(|k| !known.contains(k.as_str())).collect();
    if !unknown.is_empty() {
        unknown.sort();
        return Err(Error::invalid(format!("split names unknown site {}", unknown[0])));
    }
    let assigned = data
        .sites()
        .iter()
        .map(|s| roles.get(&s.id).copied().unwrap_or(Role::Train))
        .collect();
    data.with_roles(assigned)
}

pub fn apply_split(data: OccupancyDataset, split: &SplitSpec) -> Result<OccupancyDataset> {
    if let Some(path) = &split.holdout_file {
        let roles = read_split(path)?;
        return assign_roles(data, &roles);
    }
    if let Some(ids) = &split.holdout_ids {
        let roles = ids.iter().map(|id| (id.clone(), Role::Holdout)).collect();
        return assign_roles(data, &roles);
    }
    if let Some(f) = split.fraction {
        let n = data.len();
        let k = (f * n as f64).round() as usize;
        if k >= n {
            return Err(Error::invalid("split fraction leaves no training sites"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(split.seed);
        let mut roles = vec![Role::Train; n];
        for i in index::sample(&mut rng, n, k) {
            roles[i] = Role::Holdout;
        }
        return data.with_roles(roles);
    }
    Ok(data)
}

/// One row of `psi_raster.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterRow {
    pub x: f64,
    pub y: f64,
    pub psi_mean: f64,
    pub psi_lo: f64,
    pub psi_hi: f64,
}

/// Cell centers of an `nx x ny` grid over a bounding box.
pub fn raster_grid(bbox: &BoundingBox, nx: usize, ny: usize) -> Vec<[f64; 2]> {
    let w = bbox.width();
    let mut out = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            out.push([
                bbox.min[0] + w[0] * (ix as f64 + 0.5) / nx as f64,
                bbox.min[1] + w[1] * (iy as f64 + 0.5) / ny as f64,
            ]);
        }
    }
    out
}

/// Posterior mean and 95% interval of `psi` at each point.
pub fn psi_raster(samples: &PosteriorSamples, coords: &[[f64; 2]]) -> Result<Vec<RasterRow>> {
    if samples.draws.is_empty() {
        return Err(Error::invalid("posterior has no retained draws"));
    }
    let draws = samples.psi_draws(coords, None)?;
    let m = draws.len() as f64;
    let mut column = vec![0.0; draws.len()];
    Ok(coords
        .iter()
        .enumerate()
        .map(|(k, s)| {
            for (c, row) in column.iter_mut().zip(&draws) {
                *c = row[k];
            }
            let mean = column.iter().sum::<f64>() / m;
            column.sort_by(f64::total_cmp);
            // a skewed posterior can put the mean outside the central interval
            let lo = quantile_sorted(&column, 0.025).min(mean);
            let hi = quantile_sorted(&column, 0.975).max(mean);
            RasterRow {
                x: s[0],
                y: s[1],
                psi_mean: mean,
                psi_lo: lo,
                psi_hi: hi,
            }
        })
        .collect())
}

pub fn write_raster(rows: &[RasterRow], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["x", "y", "psi_mean", "psi_lo", "psi_hi"])?;
    for r in rows {
        w.write_record([num(r.x), num(r.y), num(r.psi_mean), num(r.psi_lo), num(r.psi_hi)])?;
    }
    finish(w, path)
}

fn read_table(path: &Path, header: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != header {
        return Err(load_err(path, 1, format!("header must be {}", header.join(","))));
    }
    rdr.records()
        .map(|r| {
            let r = r?;
            Ok((r.position().map_or(0, |p| p.line()), r))
        })
        .collect()
}

fn parse_opt(path: &Path, line: u64, field: &str, text: &str) -> Result<Option<f64>> {
    if text == "NA" {
        Ok(None)
    } else {
        parse_f64(path, line, field, text).map(Some)
    }
}

pub fn read_raster(path: &Path) -> Result<Vec<RasterRow>> {
    let names = ["x", "y", "psi_mean", "psi_lo", "psi_hi"];
    read_table(path, &names)?
        .into_iter()
        .map(|(line, r)| {
            let f = |k: usize| parse_f64(path, line, names[k], &r[k]);
            Ok(RasterRow {
                x: f(0)?,
                y: f(1)?,
                psi_mean: f(2)?,
                psi_lo: f(3)?,
                psi_hi: f(4)?,
            })
        })
        .collect()
}

/// Contents of `score.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreFile {
    pub model: String,
    pub neg2_lppd: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub n_holdout: usize,
}

impl From<&ScoreReport> for ScoreFile {
    fn from(r: &ScoreReport) -> Self {
        ScoreFile {
            model: r.model.clone(),
            neg2_lppd: r.neg2_lppd,
            m: r.m,
            n_holdout: r.n_holdout,
        }
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_score(report: &ScoreReport, path: &Path) -> Result<()> {
    write_json(&ScoreFile::from(report), path)
}

pub fn read_score(path: &Path) -> Result<ScoreFile> {
    read_json(path)
}

const CORRELOGRAM_HEADER: [&str; 6] = ["bin_lo", "bin_hi", "I", "env_lo", "env_hi", "pairs"];

pub fn write_correlogram(c: &Correlogram, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(CORRELOGRAM_HEADER)?;
    for b in &c.bins {
        w.write_record([
            num(b.lo),
            num(b.hi),
            opt(b.moran_i),
            opt(b.env_lo),
            opt(b.env_hi),
            b.pairs.to_string(),
        ])?;
    }
    finish(w, path)
}

pub fn read_correlogram_bins(path: &Path) -> Result<Vec<CorrelogramBin>> {
    read_table(path, &CORRELOGRAM_HEADER)?
        .into_iter()
        .map(|(line, r)| {
            let h = &CORRELOGRAM_HEADER;
            Ok(CorrelogramBin {
                lo: parse_f64(path, line, h[0], &r[0])?,
                hi: parse_f64(path, line, h[1], &r[1])?,
                moran_i: parse_opt(path, line, h[2], &r[2])?,
                env_lo: parse_opt(path, line, h[3], &r[3])?,
                env_hi: parse_opt(path, line, h[4], &r[4])?,
                pairs: r[5]
                    .parse()
                    .map_err(|_| load_err(path, line, "pairs is not a count"))?,
            })
        })
        .collect()
}

/// Metadata written next to `correlogram.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelogramMeta {
    pub residual: String,
    pub sites: SiteSet,
    pub n_sites: usize,
    pub n_perm: usize,
    pub seed: u64,
    pub envelope_quantiles: [f64; 2],
}

/// One row of `posterior_summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
}

fn summarize(parameter: String, mut values: Vec<f64>) -> SummaryRow {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0)).sqrt()
    } else {
        0.0
    };
    values.sort_by(f64::total_cmp);
    SummaryRow {
        parameter,
        mean,
        sd,
        q025: quantile_sorted(&values, 0.025),
        q975: quantile_sorted(&values, 0.975),
    }
}

/// Summaries of `beta`, `p`, mean training-site `psi` and occupied fraction.
pub fn posterior_summary(
    samples: &PosteriorSamples,
    covariate_names: &[String],
) -> Result<Vec<SummaryRow>> {
    if samples.draws.is_empty() {
        return Err(Error::invalid("posterior has no retained draws"));
    }
    let k = samples.draws[0].beta.len();
    let mut rows = Vec::with_capacity(k + 3);
    for j in 0..k {
        let name = if j == 0 {
            "beta_intercept".to_string()
        } else {
            match covariate_names.get(j - 1) {
                Some(n) => format!("beta_{n}"),
                None => format!("beta_{j}"),
            }
        };
        rows.push(summarize(name, samples.draws.iter().map(|d| d.beta[j]).collect()));
    }
    rows.push(summarize("p".into(), samples.draws.iter().map(|d| d.p).collect()));
    let mean_of = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    rows.push(summarize(
        "psi_train_mean".into(),
        samples.draws.iter().map(|d| mean_of(&d.psi)).collect(),
    ));
    rows.push(summarize(
        "occupied_fraction".into(),
        samples
            .draws
            .iter()
            .map(|d| d.z.iter().filter(|&&z| z).count() as f64 / d.z.len().max(1) as f64)
            .collect(),
    ));
    Ok(rows)
}

const SUMMARY_HEADER: [&str; 5] = ["parameter", "mean", "sd", "q2.5", "q97.5"];

pub fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([r.parameter.clone(), num(r.mean), num(r.sd), num(r.q025), num(r.q975)])?;
    }
    finish(w, path)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    read_table(path, &SUMMARY_HEADER)?
        .into_iter()
        .map(|(line, r)| {
            let f = |k: usize| parse_f64(path, line, SUMMARY_HEADER[k], &r[k]);
            Ok(SummaryRow {
                parameter: r[0].to_string(),
                mean: f(1)?,
                sd: f(2)?,
                q025: f(3)?,
                q975: f(4)?,
            })
        })
        .collect()
}

pub fn write_draws(samples: &PosteriorSamples, path: &Path) -> Result<()> {
    write_json(samples, path)
}

pub fn read_draws(path: &Path) -> Result<PosteriorSamples> {
    read_json(path)
}

pub fn write_config(cfg: &RunConfig, path: &Path) -> Result<()> {
    write_json(cfg, path)
}

pub fn read_config_echo(path: &Path) -> Result<RunConfig> {
    read_json(path)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Warnings {
    pub warnings: Vec<String>,
}

pub fn write_warnings(w: &Warnings, path: &Path) -> Result<()> {
    write_json(w, path)
}

pub fn read_warnings(path: &Path) -> Result<Warnings> {
    read_json(path)
}

/// Everything a fit directory holds besides the dataset copy.
#[derive(Debug, Clone)]
pub struct FitOutputs<'a> {
    pub config: &'a RunConfig,
    pub samples: &'a PosteriorSamples,
    pub score: Option<&'a ScoreReport>,
    pub correlogram: Option<(&'a Correlogram, &'a CorrelogramMeta)>,
    pub raster: &'a [RasterRow],
    pub summary: &'a [SummaryRow],
    pub warnings: &'a Warnings,
}

/// Writes every fit artifact into `dir`. Stale optional files are removed.
pub fn write_outputs(dir: &Path, out: &FitOutputs<'_>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_config(out.config, &dir.join(CONFIG_FILE))?;
    write_draws(out.samples, &dir.join(DRAWS_FILE))?;
    write_raster(out.raster, &dir.join(RASTER_FILE))?;
    write_summary(out.summary, &dir.join(SUMMARY_FILE))?;
    let remove = |name: &str| {
        let p = dir.join(name);
        match fs::remove_file(&p) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(Error::io(p, e)),
            _ => Ok(()),
        }
    };
    match out.score {
        Some(s) => write_score(s, &dir.join(SCORE_FILE))?,
        None => remove(SCORE_FILE)?,
    }
    match out.correlogram {
        Some((c, meta)) => {
            write_correlogram(c, &dir.join(CORRELOGRAM_FILE))?;
            write_json(meta, &dir.join(CORRELOGRAM_META_FILE))?;
        }
        None => {
            remove(CORRELOGRAM_FILE)?;
            remove(CORRELOGRAM_META_FILE)?;
        }
    }
    if out.warnings.warnings.is_empty() {
        remove(WARNINGS_FILE)
    } else {
        write_warnings(out.warnings, &dir.join(WARNINGS_FILE))
    }
}
