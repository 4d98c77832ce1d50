//! `spocc` command-line front end and the fit workflow behind it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataio::*;
use crate::error::{Error, Result};
use crate::learners::{BoundingBox, LearnerSpec};
use crate::model::OccupancyDataset;
use crate::sampler::{run_chain, McmcConfig, PosteriorSamples};
use crate::scoring::{self, default_bins, occupancy_residuals, Correlogram, ScoreReport};
use crate::synthgen::{make_surface, sample_design, GridSpec, ScenarioParams};

/// In-memory result of one fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub samples: PosteriorSamples,
    pub score: Option<ScoreReport>,
    pub correlogram: Option<(Correlogram, CorrelogramMeta)>,
    pub warnings: Warnings,
}

/// Moran's I correlogram of occupancy residuals on a set of sites.
pub fn residual_correlogram(
    samples: &PosteriorSamples,
    data: &OccupancyDataset,
    scoring: &ScoringConfig,
    sites: SiteSet,
) -> Result<(Correlogram, CorrelogramMeta)> {
    let idx = sites.indices(data);
    let coords: Vec<[f64; 2]> = idx.iter().map(|&i| data.sites()[i].coords).collect();
    let resid = occupancy_residuals(samples, data, &idx)?;
    let edges = match &scoring.bins {
        Some(b) => b.clone(),
        None => default_bins(&coords, scoring.n_bins)?,
    };
    let c = scoring::correlogram(&resid, &coords, &edges, scoring.n_perm, scoring.seed)?;
    let meta = CorrelogramMeta {
        residual: RESIDUAL_DEFINITION.to_string(),
        sites,
        n_sites: idx.len(),
        n_perm: scoring.n_perm,
        seed: scoring.seed,
        envelope_quantiles: [0.025, 0.975],
    };
    Ok((c, meta))
}

/// Runs the chain, scores the holdout and computes the residual correlogram.
pub fn fit_dataset(
    data: &OccupancyDataset,
    learner: &LearnerSpec,
    label: &str,
    mcmc: &McmcConfig,
    scoring: &ScoringConfig,
) -> Result<FitResult> {
    let samples = run_chain(data, learner, mcmc)?;
    let mut warnings = Warnings::default();
    let holdout = data.holdout_indices();
    let score = if holdout.is_empty() {
        warnings
            .warnings
            .push("holdout set is empty; score.json not written".into());
        None
    } else {
        Some(scoring::neg2_lppd(&samples, data, &holdout, label)?)
    };
    let correlogram = match residual_correlogram(&samples, data, scoring, scoring.residual_sites) {
        Ok(c) => Some(c),
        Err(e @ (Error::UndefinedStatistic(_) | Error::Degenerate(_))) => {
            warnings.warnings.push(format!("correlogram not computed: {e}"));
            None
        }
        Err(e) => return Err(e),
    };
    Ok(FitResult {
        samples,
        score,
        correlogram,
        warnings,
    })
}

fn data_dir(fit_dir: &Path) -> PathBuf {
    fit_dir.join("data")
}

fn site_bbox(data: &OccupancyDataset) -> BoundingBox {
    let coords: Vec<[f64; 2]> = data.sites().iter().map(|s| s.coords).collect();
    BoundingBox::of(&coords)
}

/// Loads the data named by `cfg`, fits, and writes the fit directory.
pub fn fit_run(cfg: &RunConfig) -> Result<FitResult> {
    let names = covariate_names(&cfg.sites)?;
    let data = apply_split(load_dataset(&cfg.sites, &cfg.detections)?, &cfg.split)?;
    let label = cfg.label();
    let result = fit_dataset(&data, &cfg.learner, &label, &cfg.mcmc, &cfg.scoring)?;
    let grid = raster_grid(&site_bbox(&data), cfg.raster.nx, cfg.raster.ny);
    let raster = psi_raster(&result.samples, &grid)?;
    let summary = posterior_summary(&result.samples, &names)?;
    write_dataset(&data, &data_dir(&cfg.output_dir), Some(&names))?;
    write_outputs(
        &cfg.output_dir,
        &FitOutputs {
            config: cfg,
            samples: &result.samples,
            score: result.score.as_ref(),
            correlogram: result.correlogram.as_ref().map(|(c, m)| (c, m)),
            raster: &raster,
            summary: &summary,
            warnings: &result.warnings,
        },
    )?;
    Ok(result)
}

/// Fit artifacts read back from a fit directory.
pub struct FitDir {
    pub config: RunConfig,
    pub samples: PosteriorSamples,
    pub data: OccupancyDataset,
}

impl FitDir {
    pub fn open(dir: &Path) -> Result<Self> {
        for name in [CONFIG_FILE, DRAWS_FILE] {
            let p = dir.join(name);
            if !p.is_file() {
                return Err(Error::invalid(format!("missing fit artifact {}", p.display())));
            }
        }
        let d = data_dir(dir);
        let data = load_dataset(&d.join(SITES_FILE), &d.join(DETECTIONS_FILE))?;
        let roles = read_split(&d.join(SPLIT_FILE))?;
        Ok(FitDir {
            config: read_config_echo(&dir.join(CONFIG_FILE))?,
            samples: read_draws(&dir.join(DRAWS_FILE))?,
            data: assign_roles(data, &roles)?,
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "spocc", version, about = "Spatial occupancy models with embedded learners")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a synthetic scenario and a sampled dataset.
    Simulate(SimulateArgs),
    /// Fit a model described by a run config.
    Fit(FitArgs),
    /// Posterior occupancy raster from a fit.
    Predict(PredictArgs),
    /// Holdout −2×LPPD of a fit.
    Score(ScoreArgs),
    /// Moran's I correlogram of a fit's residuals.
    Correlogram(CorrelogramArgs),
    /// Fit several learners on one dataset and rank them.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=6))]
    pub scenario: u8,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "30x30")]
    pub grid: GridSpec,
    #[arg(long, default_value_t = 200)]
    pub n_train: usize,
    #[arg(long, default_value_t = 200)]
    pub n_holdout: usize,
    #[arg(long, default_value_t = 3)]
    pub visits: usize,
    #[arg(long)]
    pub p: Option<f64>,
    /// JSON file overriding scenario constants.
    #[arg(long)]
    pub params: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long, default_value = "30x30")]
    pub grid: GridSpec,
    /// `xmin,ymin,xmax,ymax`; defaults to the bounding box of the fit's sites.
    #[arg(long)]
    pub bbox: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub fit: PathBuf,
    /// `site_id,role` file replacing the fit's split.
    #[arg(long)]
    pub holdout: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorrelogramArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub sites: Option<SiteSet>,
    #[arg(long)]
    pub n_bins: Option<usize>,
    #[arg(long)]
    pub n_perm: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Directory with sites.csv, detections.csv and optionally split.csv.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "tree,svr,gp,gmrf,none")]
    pub learners: Vec<String>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON with shared `mcmc`, `scoring`, `raster` and per-learner `learners`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Shared settings for `compare`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub mcmc: McmcConfig,
    pub scoring: ScoringConfig,
    pub raster: RasterConfig,
    pub learners: BTreeMap<String, LearnerSpec>,
}

/// One row of `league.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeagueRow {
    pub learner: String,
    pub neg2_lppd: Option<f64>,
    pub status: String,
    pub message: String,
}

pub const LEAGUE_FILE: &str = "league.csv";

fn read_json_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let mut params: ScenarioParams = match &a.params {
        Some(p) => read_json_file(p)?,
        None => ScenarioParams::default(),
    };
    if let Some(p) = a.p {
        params.p = p;
    }
    let surface = make_surface(a.scenario, a.grid, &params, a.seed)?;
    let data = sample_design(&surface, a.n_train, a.n_holdout, a.visits, a.seed)?;
    write_dataset(&data, &a.out, None)?;
    let path = a.out.join("truth_raster.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["x", "y", "f", "psi"])?;
    for ((s, f), psi) in surface.coords.iter().zip(&surface.f).zip(&surface.psi) {
        w.write_record([s[0], s[1], *f, *psi].map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let echo = serde_json::json!({
        "scenario": a.scenario,
        "seed": a.seed,
        "grid": a.grid,
        "n_train": a.n_train,
        "n_holdout": a.n_holdout,
        "visits": a.visits,
        "params": params,
    });
    let path = a.out.join("scenario.json");
    fs::write(&path, serde_json::to_string_pretty(&echo)? + "\n").map_err(|e| Error::io(&path, e))
}

fn parse_bbox(text: &str) -> Result<BoundingBox> {
    let v: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::invalid(format!("bbox {text:?} is not xmin,ymin,xmax,ymax")))?;
    if v.len() != 4 || v.iter().any(|x| !x.is_finite()) || v[0] > v[2] || v[1] > v[3] {
        return Err(Error::invalid(format!("bbox {text:?} is not xmin,ymin,xmax,ymax")));
    }
    Ok(BoundingBox {
        min: [v[0], v[1]],
        max: [v[2], v[3]],
    })
}

fn predict(a: &PredictArgs) -> Result<()> {
    let fit = FitDir::open(&a.fit)?;
    let bbox = match &a.bbox {
        Some(t) => parse_bbox(t)?,
        None => site_bbox(&fit.data),
    };
    let rows = psi_raster(&fit.samples, &raster_grid(&bbox, a.grid.nx, a.grid.ny))?;
    let out = a.out.clone().unwrap_or_else(|| a.fit.join(RASTER_FILE));
    write_raster(&rows, &out)
}

fn score(a: &ScoreArgs) -> Result<ScoreReport> {
    let fit = FitDir::open(&a.fit)?;
    let data = match &a.holdout {
        Some(p) => assign_roles(fit.data, &read_split(p)?)?,
        None => fit.data,
    };
    let holdout = data.holdout_indices();
    if holdout.is_empty() {
        let w = Warnings {
            warnings: vec!["holdout set is empty; score.json not written".into()],
        };
        write_warnings(&w, &a.fit.join(WARNINGS_FILE))?;
        return Err(Error::UndefinedStatistic("holdout set is empty".into()));
    }
    let report = scoring::neg2_lppd(&fit.samples, &data, &holdout, &fit.config.label())?;
    let out = a.out.clone().unwrap_or_else(|| a.fit.join(SCORE_FILE));
    write_score(&report, &out)?;
    Ok(report)
}

fn correlogram_cmd(a: &CorrelogramArgs) -> Result<()> {
    let fit = FitDir::open(&a.fit)?;
    let mut sc = fit.config.scoring.clone();
    if let Some(n) = a.n_bins {
        sc.n_bins = n;
        sc.bins = None;
    }
    if let Some(n) = a.n_perm {
        sc.n_perm = n;
    }
    if let Some(s) = a.seed {
        sc.seed = s;
    }
    let sites = a.sites.unwrap_or(sc.residual_sites);
    let (c, meta) = residual_correlogram(&fit.samples, &fit.data, &sc, sites)?;
    let out = a.out.clone().unwrap_or_else(|| a.fit.join(CORRELOGRAM_FILE));
    write_correlogram(&c, &out)?;
    let meta_path = out.with_extension("json");
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n")
        .map_err(|e| Error::io(&meta_path, e))
}

/// Runs every requested learner; failures become table rows.
pub fn compare(a: &CompareArgs) -> Result<Vec<LeagueRow>> {
    let cfg: CompareConfig = match &a.config {
        Some(p) => read_json_file(p)?,
        None => CompareConfig::default(),
    };
    if a.learners.is_empty() {
        return Err(Error::invalid("no learners requested"));
    }
    let mut specs = Vec::with_capacity(a.learners.len());
    for (k, name) in a.learners.iter().enumerate() {
        if a.learners[..k].contains(name) {
            return Err(Error::invalid(format!("learner {name} requested twice")));
        }
        let spec = match cfg.learners.get(name) {
            Some(s) => *s,
            None => LearnerSpec::from_name(name)?,
        };
        spec.validate()?;
        specs.push(spec);
    }
    let split = a.data.join(SPLIT_FILE);
    let runs: Vec<RunConfig> = a
        .learners
        .iter()
        .zip(&specs)
        .enumerate()
        .map(|(k, (name, spec))| RunConfig {
            sites: a.data.join(SITES_FILE),
            detections: a.data.join(DETECTIONS_FILE),
            learner: *spec,
            label: Some(name.clone()),
            mcmc: McmcConfig {
                seed: a.seed.wrapping_add(k as u64),
                ..cfg.mcmc.clone()
            },
            scoring: cfg.scoring.clone(),
            split: SplitSpec {
                holdout_file: split.is_file().then(|| split.clone()),
                ..SplitSpec::default()
            },
            output_dir: a.out.join(name),
            raster: cfg.raster,
        })
        .collect();
    for r in &runs {
        r.validate()?;
    }

    let threads = a
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, runs.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<FitResult>>>> =
        Mutex::new((0..runs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= runs.len() {
                    break;
                }
                let r = fit_run(&runs[k]);
                results.lock().expect("result slot")[k] = Some(r);
            });
        }
    });

    let mut rows: Vec<LeagueRow> = results
        .into_inner()
        .expect("result slots")
        .into_iter()
        .zip(&a.learners)
        .map(|(r, name)| match r.expect("every run finishes") {
            Ok(FitResult { score: Some(s), .. }) => LeagueRow {
                learner: name.clone(),
                neg2_lppd: Some(s.neg2_lppd),
                status: "ok".into(),
                message: String::new(),
            },
            Ok(_) => LeagueRow {
                learner: name.clone(),
                neg2_lppd: None,
                status: "unscored".into(),
                message: "holdout set is empty".into(),
            },
            Err(e) => LeagueRow {
                learner: name.clone(),
                neg2_lppd: None,
                status: "failed".into(),
                message: e.to_string(),
            },
        })
        .collect();
    // scored rows ascending, then the rest in request order
    rows.sort_by(|x, y| match (x.neg2_lppd, y.neg2_lppd) {
        (Some(a), Some(b)) => a.total_cmp(&b),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    write_league(&rows, &a.out.join(LEAGUE_FILE))?;
    Ok(rows)
}

pub fn write_league(rows: &[LeagueRow], path: &Path) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rank", "learner", "neg2_lppd", "status", "message"])?;
    for (k, r) in rows.iter().enumerate() {
        let rank = if r.neg2_lppd.is_some() {
            (k + 1).to_string()
        } else {
            "NA".into()
        };
        let score = r.neg2_lppd.map_or_else(|| "NA".into(), |v| v.to_string());
        w.write_record([rank, r.learner.clone(), score, r.status.clone(), r.message.clone()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_league(path: &Path) -> Result<Vec<LeagueRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.records()
        .map(|r| {
            let r = r?;
            Ok(LeagueRow {
                learner: r[1].to_string(),
                neg2_lppd: if &r[2] == "NA" {
                    None
                } else {
                    Some(r[2].parse().map_err(|_| Error::invalid("bad neg2_lppd"))?)
                },
                status: r[3].to_string(),
                message: r[4].to_string(),
            })
        })
        .collect()
}

/// Runs one parsed command. Returns the process exit code.
pub fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Simulate(a) => simulate(a)?,
        Command::Fit(a) => {
            let cfg = RunConfig::load(&a.config)?;
            let r = fit_run(&cfg)?;
            for w in &r.warnings.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(s) = &r.score {
                println!("{}: -2*LPPD = {} over {} holdout sites", s.model, s.neg2_lppd, s.n_holdout);
            }
        }
        Command::Predict(a) => predict(a)?,
        Command::Score(a) => {
            let s = score(a)?;
            println!("{}: -2*LPPD = {} over {} holdout sites", s.model, s.neg2_lppd, s.n_holdout);
        }
        Command::Correlogram(a) => correlogram_cmd(a)?,
        Command::Compare(a) => {
            let rows = compare(a)?;
            for r in &rows {
                let v = r.neg2_lppd.map_or_else(|| "NA".into(), |v| format!("{v:.2}"));
                println!("{:<6} {:>10} {}", r.learner, v, r.status);
            }
            if rows.iter().any(|r| r.status != "ok") {
                for r in rows.iter().filter(|r| r.status == "failed") {
                    eprintln!("error: {}: {}", r.learner, r.message);
                }
                return Ok(2);
            }
        }
    }
    Ok(0)
}

/// Entry point for the binary.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
