//! Command-line orchestration: config parsing, subcommand dispatch, replica
//! scheduling and output files.
//!
//! Every run writes `manifest.json` first (with an empty inventory), then
//! its CSV/JSON outputs, then rewrites the manifest with the SHA-256 of each
//! output. Exit codes: 0 success or all criteria passed, 2 some criterion
//! failed, 1 invalid config or a numerical error, 3 I/O failure, 4 unknown
//! subcommand or bad arguments.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::deterministic::{integrate_ode, step_count, uniform_sample_times, Preset, SirState, Trajectory};
use crate::error::{Error, Result};
use crate::fluctuation::{psi, DriftConvention, FluctuationState, OuCoefficients};
use crate::grid::Grid;
use crate::jump::{gillespie, gillespie_with_log, JumpState};
use crate::rng::{derive_replica_seed, replica_rng};
use crate::spde_limit::{states_on_steps, BarCoefficients, LimitEngine, MartingaleCoefficients};
use crate::spectral::{eigenvalue_continuous, modes, sobolev_norm_continuous, Basis, MAX_CONTINUOUS_MODE};
use crate::stats::{empirical_moments, lyapunov_cov, Verdict, BOOTSTRAP_RESAMPLES};
use crate::verify::{self, Report, Table, VerifySettings};

pub const EXIT_FAILED: u8 = 2;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_IO: u8 = 3;
pub const EXIT_USAGE: u8 = 4;

/// Environment variable that overrides `master_seed`.
pub const SEED_ENV: &str = "SIRLAB_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub ell: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    #[serde(rename = "N")]
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    #[serde(rename = "T")]
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepsConfig {
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetConfig {
    /// Only `"standard"` exists; its numbers come from `params`.
    pub name: String,
    #[serde(default)]
    pub params: Preset,
}

/// Experiment definition read from JSON. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub population: PopulationConfig,
    pub horizon: HorizonConfig,
    pub steps: StepsConfig,
    pub preset: PresetConfig,
    pub replicas: usize,
    pub master_seed: u64,
    /// Mode truncation of the continuous negative Sobolev norms.
    #[serde(default = "default_truncation")]
    pub truncation: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Number of output times in `[0, T]`, ends included.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Worker threads; all available cores when absent.
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub convention: DriftConvention,
    /// Deterministic path for the limit coefficients is computed on this
    /// finer grid when set.
    #[serde(default)]
    pub surrogate_ell: Option<usize>,
    /// Write a JSONL event log for jump replica 0.
    #[serde(default)]
    pub event_log: bool,
    #[serde(default)]
    pub verify: VerifySettings,
}

fn default_truncation() -> usize {
    crate::spectral::DEFAULT_TRUNCATION
}

fn default_gamma() -> f64 {
    2.0
}

fn default_samples() -> usize {
    11
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("cannot read {}: {e}", path.display()))))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        let grid = Grid::new(self.grid.ell).map_err(cfg)?;
        if self.preset.name != "standard" {
            return Err(Error::Config(format!("unknown preset {:?}; only \"standard\" exists", self.preset.name)));
        }
        self.preset.params.validate().map_err(cfg)?;
        if self.population.n == 0 {
            return Err(Error::Config("population N must be >= 1".into()));
        }
        if !(self.horizon.t > 0.0 && self.horizon.t.is_finite()) {
            return Err(Error::Config(format!("horizon T must be > 0, got {}", self.horizon.t)));
        }
        step_count(self.horizon.t, self.steps.h).map_err(cfg)?;
        self.preset.params.params(grid).map_err(cfg)?.check_step(self.steps.h).map_err(cfg)?;
        if self.replicas == 0 {
            return Err(Error::Config("replicas must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if self.truncation < 2 || self.truncation % 2 == 1 || self.truncation > MAX_CONTINUOUS_MODE {
            return Err(Error::Config(format!(
                "truncation must be even in [2, {MAX_CONTINUOUS_MODE}], got {}",
                self.truncation
            )));
        }
        if self.samples < 2 {
            return Err(Error::Config("samples must be >= 2".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        if let Some(s) = self.surrogate_ell {
            let sg = Grid::new(s).map_err(cfg)?;
            if s % self.grid.ell != 0 || (s / self.grid.ell) % 2 == 0 {
                return Err(Error::Config(format!(
                    "surrogate_ell {s} must be an odd multiple of ell {}",
                    self.grid.ell
                )));
            }
            self.preset.params.params(sg).map_err(cfg)?.check_step(self.steps.h).map_err(cfg)?;
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.grid.ell).expect("validated")
    }

    fn steps(&self) -> usize {
        step_count(self.horizon.t, self.steps.h).expect("validated")
    }

    /// Output times: `samples` evenly strided step multiples.
    pub fn sample_times(&self) -> Vec<f64> {
        let n = self.steps();
        let stride = (n / (self.samples - 1)).max(1);
        uniform_sample_times(n, self.steps.h, stride)
    }

    pub fn replica_seeds(&self) -> Vec<u64> {
        (0..self.replicas as u64).map(|r| derive_replica_seed(self.master_seed, r)).collect()
    }

    /// SHA-256 of the canonical JSON of the effective config.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("serializable");
        hex(&Sha256::digest(text.as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_hash: String,
    pub tool_version: String,
    pub master_seed: u64,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub replica_seeds: Vec<u64>,
    pub files: Vec<ManifestFile>,
    pub config: ExperimentConfig,
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Output directory that tracks every file it writes.
struct OutDir {
    root: PathBuf,
    manifest: RunManifest,
}

impl OutDir {
    fn create(root: PathBuf, subcommand: &str, config: &ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(&root)?;
        let manifest = RunManifest {
            subcommand: subcommand.into(),
            config_hash: config.hash(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            master_seed: config.master_seed,
            started_unix: now_unix(),
            finished_unix: None,
            replica_seeds: config.replica_seeds(),
            files: Vec::new(),
            config: config.clone(),
        };
        let out = Self { root, manifest };
        out.write_manifest()?;
        Ok(out)
    }

    fn write_manifest(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(self.root.join("manifest.json"), text)?;
        Ok(())
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.root.join(name), bytes)?;
        self.manifest.files.push(ManifestFile {
            name: name.into(),
            bytes: bytes.len() as u64,
            sha256: hex(&Sha256::digest(bytes)),
        });
        Ok(())
    }

    fn write_csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let mut buf = BufWriter::new(Vec::new());
        writeln!(buf, "{}", header.join(","))?;
        for row in rows {
            writeln!(buf, "{}", row.join(","))?;
        }
        let bytes = buf.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        self.write(name, &bytes)
    }

    fn write_table(&mut self, t: &Table) -> Result<()> {
        let header: Vec<&str> = t.header.iter().map(String::as_str).collect();
        self.write_csv(
            &format!("{}.csv", t.name),
            &header,
            t.rows.iter().map(|r| r.iter().map(|&x| num(x)).collect()),
        )
    }

    fn finish(mut self) -> Result<()> {
        self.manifest.finished_unix = Some(now_unix());
        self.write_manifest()
    }
}

/// 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Parser)]
#[command(name = "sirlab", version, about = "Spatial SIR epidemic lab: simulation and verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; overrides the config.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Deterministic lattice ODE.
    SimulateOde,
    /// Jump process replicas.
    SimulateJump,
    /// Rescaled jump deviation and the fixed-spacing OU system.
    Fluctuations,
    /// Limit martingales, stochastic convolution and forced system.
    Spde,
    /// Basis, eigenvalues and initial-data coefficients.
    Spectra,
    /// Law of large numbers check.
    VerifyLln,
    /// Fixed-spacing CLT and Gaussianity checks.
    VerifyCltFixedEps,
    /// Martingale bracket refinement and Monte Carlo checks.
    VerifyBracketRefinement,
    /// Every acceptance check.
    VerifyAll,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SimulateOde => "simulate-ode",
            Command::SimulateJump => "simulate-jump",
            Command::Fluctuations => "fluctuations",
            Command::Spde => "spde",
            Command::Spectra => "spectra",
            Command::VerifyLln => "verify-lln",
            Command::VerifyCltFixedEps => "verify-clt-fixed-eps",
            Command::VerifyBracketRefinement => "verify-bracket-refinement",
            Command::VerifyAll => "verify-all",
        }
    }
}

/// Whether the run passed; simulations always do.
pub type Outcome = bool;

/// Replaces `master_seed` by the value of [`SEED_ENV`] when one is given.
pub fn apply_seed_override(config: &mut ExperimentConfig, value: Option<&str>) -> Result<()> {
    if let Some(v) = value {
        config.master_seed = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}")))?;
    }
    Ok(())
}

/// Runs `command` into `out`; returns whether every criterion passed.
pub fn run_subcommand(command: Command, config: ExperimentConfig, out: &Path) -> Result<Outcome> {
    let mut dir = OutDir::create(out.to_path_buf(), command.name(), &config)?;
    let pass = match command {
        Command::SimulateOde => simulate_ode(&config, &mut dir).map(|_| true),
        Command::SimulateJump => simulate_jump(&config, &mut dir).map(|_| true),
        Command::Fluctuations => fluctuations(&config, &mut dir).map(|_| true),
        Command::Spde => spde(&config, &mut dir).map(|_| true),
        Command::Spectra => spectra(&config, &mut dir).map(|_| true),
        Command::VerifyLln => {
            let r = verify::check_lln(&config.verify, &config.preset.params, config.master_seed)?;
            write_reports(&mut dir, &[r])
        }
        Command::VerifyCltFixedEps => {
            let (a, b) = verify::check_clt(&config.verify, &config.preset.params, config.master_seed)?;
            write_reports(&mut dir, &[a, b])
        }
        Command::VerifyBracketRefinement => {
            let r = verify::check_bracket(&config.verify, &config.preset.params, config.master_seed)?;
            write_reports(&mut dir, &[r])
        }
        Command::VerifyAll => {
            let rs = verify::run_all(&config.verify, &config.preset.params, config.master_seed)?;
            write_reports(&mut dir, &rs)
        }
    }?;
    dir.finish()?;
    Ok(pass)
}

fn write_reports(dir: &mut OutDir, reports: &[Report]) -> Result<bool> {
    let verdicts: Vec<&Verdict> = reports.iter().flat_map(|r| &r.verdicts).collect();
    for r in reports {
        for t in &r.tables {
            dir.write_table(t)?;
        }
    }
    dir.write("verdicts.json", serde_json::to_string_pretty(&verdicts)?.as_bytes())?;
    for r in reports {
        eprintln!("criterion {} {}: {}", r.criterion, r.title, if r.pass() { "PASS" } else { "FAIL" });
        for v in &r.verdicts {
            eprintln!("    {} = {:.6e} (band {}) {}", v.criterion, v.statistic, v.band, if v.pass { "ok" } else { "FAIL" });
        }
    }
    Ok(reports.iter().all(Report::pass))
}

fn ode_path(cfg: &ExperimentConfig, grid: Grid, times: &[f64]) -> Result<Trajectory<SirState>> {
    let params = cfg.preset.params.params(grid)?;
    integrate_ode(&cfg.preset.params.initial_state(grid)?, &params, cfg.horizon.t, cfg.steps.h, times)
}

fn sir_rows(prefix: &[String], t: f64, st: &SirState) -> Vec<Vec<String>> {
    (0..st.grid().ell())
        .map(|k| {
            let mut row = prefix.to_vec();
            row.extend([num(t), k.to_string(), num(st.s.values()[k]), num(st.i.values()[k]), num(st.r.values()[k])]);
            row
        })
        .collect()
}

fn simulate_ode(cfg: &ExperimentConfig, dir: &mut OutDir) -> Result<()> {
    let det = ode_path(cfg, cfg.grid(), &cfg.sample_times())?;
    let rows = det.iter().flat_map(|(t, st)| sir_rows(&[], t, st));
    dir.write_csv("ode.csv", &["t", "site", "S", "I", "R"], rows)
}

fn jump_runs(cfg: &ExperimentConfig, times: &[f64]) -> Result<(JumpState, Vec<Trajectory<JumpState>>, Vec<u8>)> {
    let grid = cfg.grid();
    let params = cfg.preset.params.params(grid)?;
    let js0 = JumpState::from_proportions(&cfg.preset.params.initial_state(grid)?, cfg.population.n)?;
    let seeds = cfg.replica_seeds();
    let mut log = Vec::new();
    let runs = seeds
        .par_iter()
        .enumerate()
        .map(|(r, &seed)| {
            if r == 0 && cfg.event_log {
                let mut buf = Vec::new();
                let run = gillespie_with_log(&js0, &params, cfg.horizon.t, seed, times, &mut buf)?;
                Ok((run.trajectory, buf))
            } else {
                Ok((gillespie(&js0, &params, cfg.horizon.t, seed, times)?.trajectory, Vec::new()))
            }
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .enumerate()
        .map(|(r, (traj, buf))| {
            if r == 0 {
                log = buf;
            }
            traj
        })
        .collect();
    Ok((js0, runs, log))
}

fn simulate_jump(cfg: &ExperimentConfig, dir: &mut OutDir) -> Result<()> {
    let (_, runs, log) = jump_runs(cfg, &cfg.sample_times())?;
    let mut rows = Vec::new();
    for (r, run) in runs.iter().enumerate() {
        for (t, st) in run.iter() {
            for k in 0..st.grid().ell() {
                rows.push(vec![
                    r.to_string(),
                    num(t),
                    k.to_string(),
                    st.counts(crate::deterministic::Compartment::S)[k].to_string(),
                    st.counts(crate::deterministic::Compartment::I)[k].to_string(),
                    st.counts(crate::deterministic::Compartment::R)[k].to_string(),
                ]);
            }
        }
    }
    dir.write_csv("jump.csv", &["replica", "t", "site", "nS", "nI", "nR"], rows)?;
    if cfg.event_log {
        dir.write("events.jsonl", &log)?;
    }
    Ok(())
}

fn fluct_rows(r: usize, t: f64, st: &FluctuationState) -> Vec<Vec<String>> {
    (0..st.grid().ell())
        .map(|k| {
            vec![
                r.to_string(),
                num(t),
                k.to_string(),
                num(st.u.values()[k]),
                num(st.v.values()[k]),
                num(st.w.values()[k]),
            ]
        })
        .collect()
}

fn fluctuations(cfg: &ExperimentConfig, dir: &mut OutDir) -> Result<()> {
    let grid = cfg.grid();
    let params = cfg.preset.params.params(grid)?;
    let times = cfg.sample_times();
    let (t_end, h) = (cfg.horizon.t, cfg.steps.h);
    let n = cfg.steps();
    let (js0, runs, _) = jump_runs(cfg, &times)?;
    let z0 = js0.to_proportions()?;
    let det = integrate_ode(&z0, &params, t_end, h, &times)?;
    let psis = runs.iter().map(|run| psi(run, &det)).collect::<Result<Vec<_>>>()?;
    let rows = psis
        .iter()
        .enumerate()
        .flat_map(|(r, p)| p.iter().flat_map(move |(t, st)| fluct_rows(r, t, st)).collect::<Vec<_>>());
    dir.write_csv("psi.csv", &["replica", "t", "site", "U", "V", "W"], rows)?;

    let det_all = integrate_ode(&z0, &params, t_end, h, &uniform_sample_times(n, h, 1))?;
    let ou = OuCoefficients::new(&det_all, &params, t_end, h, cfg.convention)?;
    let idx = crate::deterministic::sample_indices(&times, h, n)?;
    let ou_seed = derive_replica_seed(cfg.master_seed, u64::MAX);
    let zero = vec![0.0; 3 * grid.ell()];
    let paths: Vec<Vec<Vec<f64>>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|p| ou.simulate_path(&mut replica_rng(ou_seed, p as u64), &zero, true, &idx))
        .collect();
    let mut rows = Vec::new();
    for (r, path) in paths.iter().enumerate() {
        for (&t, y) in times.iter().zip(path) {
            rows.extend(fluct_rows(r, t, &FluctuationState::from_flat(grid, y)?));
        }
    }
    dir.write_csv("ou.csv", &["replica", "t", "site", "U", "V", "W"], rows)?;

    let oracle = lyapunov_cov(&z0, &params, t_end, h, cfg.convention)?;
    let mut rows = Vec::new();
    let ends = |ys: Vec<Vec<f64>>| -> Option<DMatrixPair> {
        (ys.len() >= 2).then(|| {
            let m = empirical_moments(&ys, BOOTSTRAP_RESAMPLES, cfg.master_seed).expect(">= 2 replicas");
            (m.cov, m.cov_se)
        })
    };
    let jump_end = ends(psis.iter().map(|p| p.last().expect("samples").to_flat()).collect());
    let ou_end = ends(paths.iter().map(|p| p.last().expect("samples").clone()).collect());
    for i in 0..oracle.nrows() {
        for j in 0..=i {
            let cell = |m: &Option<DMatrixPair>| match m {
                Some((c, s)) => [num(c[(i, j)]), num(s[(i, j)])],
                None => [String::new(), String::new()],
            };
            let mut row = vec![i.to_string(), j.to_string(), num(oracle[(i, j)])];
            row.extend(cell(&jump_end));
            row.extend(cell(&ou_end));
            rows.push(row);
        }
    }
    dir.write_csv("covariance.csv", &["i", "j", "lyapunov", "psi", "psi_se", "ou", "ou_se"], rows)
}

type DMatrixPair = (nalgebra::DMatrix<f64>, nalgebra::DMatrix<f64>);

fn spde(cfg: &ExperimentConfig, dir: &mut OutDir) -> Result<()> {
    let grid = cfg.grid();
    let params = cfg.preset.params.params(grid)?;
    let (t_end, h) = (cfg.horizon.t, cfg.steps.h);
    let n = cfg.steps();
    let times = cfg.sample_times();
    let sgrid = match cfg.surrogate_ell {
        Some(s) => Grid::new(s)?,
        None => grid,
    };
    let all = uniform_sample_times(n, h, 1);
    let sdet = ode_path(cfg, sgrid, &all)?;
    let det = Trajectory::new(all, states_on_steps(&sdet, grid, t_end, h)?)?;
    let engine = LimitEngine::new(
        MartingaleCoefficients::new(&det, &params, t_end, h)?,
        Some(BarCoefficients::new(&det, &params, t_end, h, cfg.convention)?),
        &params,
        1.0,
    )?;
    let idx = crate::deterministic::sample_indices(&times, h, n)?;
    let recs = engine.map_paths(cfg.replicas, cfg.master_seed, &idx, |r| r);
    let l = grid.ell();
    let mut rows = Vec::new();
    let mut mrows = Vec::new();
    let mut nrows = Vec::new();
    for (r, rec) in recs.iter().enumerate() {
        for (j, &t) in times.iter().enumerate() {
            let (lin, bar, m) = (&rec.linear[j], &rec.bar[j], &rec.martingale[j]);
            for k in 0..l {
                let mut row = vec![r.to_string(), num(t), k.to_string()];
                row.extend((0..3).map(|c| num(lin[c * l + k])));
                row.extend((0..3).map(|c| num(bar[c * l + k])));
                rows.push(row);
                let mut row = vec![r.to_string(), num(t), k.to_string()];
                row.extend((0..3).map(|c| num(m[c * l + k])));
                mrows.push(row);
            }
            let mut row = vec![r.to_string(), num(t)];
            for c in 0..3 {
                let y = crate::grid::LatticeField::new(
                    grid,
                    (0..l).map(|k| lin[c * l + k] + bar[c * l + k]).collect(),
                )?;
                row.push(num(sobolev_norm_continuous(&y, -cfg.gamma, cfg.truncation)?));
            }
            nrows.push(row);
        }
    }
    dir.write_csv("spde.csv", &["replica", "t", "site", "u", "v", "w", "ubar", "vbar", "wbar"], rows)?;
    dir.write_csv("martingale.csv", &["replica", "t", "site", "MS", "MI", "MR"], mrows)?;
    dir.write_csv("neg_sobolev.csv", &["replica", "t", "U", "V", "W"], nrows)
}

fn spectra(cfg: &ExperimentConfig, dir: &mut OutDir) -> Result<()> {
    let grid = cfg.grid();
    let basis = Basis::new(grid);
    let rows = basis.modes().iter().zip(basis.lambdas()).enumerate().map(|(k, (md, lam))| {
        vec![
            k.to_string(),
            md.m.to_string(),
            md.kind.as_str().to_string(),
            num(*lam),
            num(eigenvalue_continuous(md.m).expect("even")),
        ]
    });
    dir.write_csv("modes.csv", &["position", "m", "kind", "lambda_eps", "lambda"], rows)?;
    let mut rows = Vec::new();
    for k in 0..grid.ell() {
        for (i, v) in basis.vector(k).iter().enumerate() {
            rows.push(vec![k.to_string(), i.to_string(), num(grid.site(i)), num(*v)]);
        }
    }
    dir.write_csv("basis.csv", &["position", "site", "x", "value"], rows)?;
    let s0 = cfg.preset.params.initial_state(grid)?;
    for (name, f) in [("S", &s0.s), ("I", &s0.i), ("R", &s0.r)] {
        let c = basis.analyze(f)?;
        let rows = c.iter().map(|(md, v)| vec![md.m.to_string(), md.kind.as_str().to_string(), num(v)]);
        dir.write_csv(&format!("initial_{name}_coeffs.csv"), &["m", "kind", "coeff"], rows)?;
    }
    debug_assert_eq!(modes(grid).len(), grid.ell());
    Ok(())
}

fn exit_for(err: &Error) -> u8 {
    match err {
        Error::Io(_) => EXIT_IO,
        _ => EXIT_ERROR,
    }
}

/// Entry point of the binary.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let Some(path) = cli.config.as_deref() else {
        eprintln!("error: --config <path> is required");
        return ExitCode::from(EXIT_USAGE);
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    let config = match ExperimentConfig::load(path).and_then(|mut c| {
        apply_seed_override(&mut c, env_seed.as_deref())?;
        Ok(c)
    }) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_for(&e));
        }
    };
    let out = cli
        .out
        .clone()
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let jobs = cli.jobs.or(config.jobs);
    let run = || run_subcommand(cli.command, config, &out);
    let result = match jobs {
        Some(0) => Err(Error::Config("jobs must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))
            .and_then(|pool| pool.install(run)),
        None => run(),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
