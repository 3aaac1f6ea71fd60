//! Batch experiments and parameter sweeps driven by a TOML config.
//!
//! ```toml
//! [experiment]
//! input = ["fixture:barbara", "images/"]   # files, directories or fixture:<name>
//! seeds = [1, 2, 3, 4, 5]
//! output = "runs/mixed"
//!
//! [noise]                                   # or: noise = "none"
//! kind = "gaussian-mixture"
//! ratios = [0.7, 0.3]
//! sigmas = [10, 50]
//!
//! [solver]                                  # every key optional
//! max_outer_iters = 30
//! [solver.tv]
//! lambda2 = 1.0
//! [solver.denoiser]
//! kind = "tv-rof"
//! strength = 0.8
//! iters = 40
//!
//! [emit]
//! restored = true
//! weights = false
//! iterations = true
//!
//! [sweep]                                   # used by the sweep verb only
//! axis = "sigma2"
//! values = [5, 10, 15]
//! ```
//!
//! Outputs are written under `output`:
//!
//! * `summary.csv`: `image,seeds,noisy_psnr,restored_psnr,iterations`, means over seeds
//! * `cells.csv`: `image,seed,noisy_psnr,restored_psnr,iterations,converged,ratios,sigmas`
//! * `summary.txt`: aligned table, including wall time per 10 outer iterations
//! * `iterations/<image>_s<seed>.csv`: `iteration,neg_log_likelihood,synthesis_energy,relative_change,psnr,level,ratios,sigmas`
//! * `restored/<image>_s<seed>.pgm`, `noisy/…`, `weights/<image>_s<seed>_w<k>.pgm`
//!
//! List-valued columns are `;`-joined. Wall time only appears in
//! `summary.txt`, so every CSV is reproducible byte for byte.
//!
//! A sweep writes `sweep.csv` (`value,noisy_psnr,restored_psnr`) plus one
//! experiment directory per value.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixtures::{standard_image, FIXTURE_NAMES};
use crate::image::{load_pgm, psnr, save_pgm, Image};
use crate::noise::{synthesize, NoiseKind, NoiseSpec};
use crate::pipeline::{restore, IterationRecord, SolverConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Emit {
    pub restored: bool,
    pub noisy: bool,
    pub weights: bool,
    pub iterations: bool,
    pub summary: bool,
}

impl Default for Emit {
    fn default() -> Self {
        Self {
            restored: true,
            noisy: false,
            weights: false,
            iterations: true,
            summary: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// Standard deviation of the second Gaussian component.
    Sigma2,
    /// First mixture ratio `r₁`; the second becomes `1 − r₁`.
    Ratio,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Image files, directories of `.pgm` files, or `fixture:<name>`
    /// (`fixture:all` for the whole suite).
    pub input: Vec<String>,
    /// `None` when the inputs are already noisy.
    pub noise: Option<NoiseSpec>,
    pub solver: SolverConfig,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub emit: Emit,
    pub sweep: Option<SweepConfig>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    experiment: ExperimentSection,
    noise: NoiseEntry,
    #[serde(default)]
    solver: SolverConfig,
    #[serde(default)]
    emit: Emit,
    sweep: Option<SweepConfig>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSection {
    input: OneOrMany,
    #[serde(default = "default_seeds")]
    seeds: Vec<u64>,
    output: PathBuf,
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum NoiseEntry {
    Keyword(String),
    Spec(NoiseTable),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseTable {
    kind: NoiseKind,
    ratios: Vec<f64>,
    sigmas: Vec<f64>,
}

impl ExperimentConfig {
    /// Parses a config; relative paths are taken relative to `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let noise = match file.noise {
            NoiseEntry::Keyword(k) if k == "none" => None,
            NoiseEntry::Keyword(k) => {
                return Err(Error::Config(format!("noise must be a table or \"none\", got {k:?}")))
            }
            NoiseEntry::Spec(t) => Some(NoiseSpec {
                kind: t.kind,
                ratios: t.ratios,
                sigmas: t.sigmas,
                seed: 0,
            }),
        };
        let input = match file.experiment.input {
            OneOrMany::One(s) => vec![s],
            OneOrMany::Many(v) => v,
        };
        let input = input
            .into_iter()
            .map(|s| {
                if s.starts_with("fixture:") || Path::new(&s).is_absolute() {
                    s
                } else {
                    base.join(s).to_string_lossy().into_owned()
                }
            })
            .collect();
        let cfg = Self {
            input,
            noise,
            solver: file.solver,
            seeds: file.experiment.seeds,
            output: base.join(file.experiment.output),
            emit: file.emit,
            sweep: file.sweep,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.is_empty() {
            return Err(Error::Config("no input given".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if let Some(spec) = &self.noise {
            spec.validate().map_err(to_config)?;
        }
        self.solver.validate()
    }
}

#[derive(Deserialize)]
struct SolverOnly {
    #[serde(default)]
    solver: SolverConfig,
}

/// The `[solver]` section of a config file; other sections are ignored.
pub fn solver_from_toml(text: &str) -> Result<SolverConfig> {
    let doc: SolverOnly = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    doc.solver.validate()?;
    Ok(doc.solver)
}

fn to_config(e: Error) -> Error {
    match e {
        Error::Argument(m) => Error::Config(m),
        other => other,
    }
}

/// One `(image, seed)` run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellResult {
    pub image: String,
    pub seed: u64,
    pub noisy_psnr: f64,
    pub restored_psnr: f64,
    pub iterations: usize,
    pub converged: bool,
    pub ratios: String,
    pub sigmas: String,
    #[serde(skip)]
    pub seconds: f64,
}

/// Per-image means over seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub image: String,
    pub seeds: usize,
    pub noisy_psnr: f64,
    pub restored_psnr: f64,
    pub iterations: f64,
    #[serde(skip)]
    pub seconds_per_10_iters: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub rows: Vec<SummaryRow>,
    pub cells: Vec<CellResult>,
    /// `(source, reason)` for inputs or cells that were skipped.
    pub failures: Vec<(String, String)>,
}

impl Report {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }
}

/// Loaded `(name, image)` pairs and `(source, reason)` for inputs that failed.
pub type Inputs = (Vec<(String, Image)>, Vec<(String, String)>);

/// Resolves the input list into named images, skipping unreadable ones.
pub fn collect_inputs(input: &[String]) -> Inputs {
    let mut images = Vec::new();
    let mut failures = Vec::new();
    let mut load = |name: String, source: String, result: Result<Image>| match result {
        Ok(img) => images.push((name, img)),
        Err(e) => {
            warn!("skipping {source}: {e}");
            failures.push((source, e.to_string()));
        }
    };
    for entry in input {
        if let Some(name) = entry.strip_prefix("fixture:") {
            let names: Vec<&str> = if name == "all" { FIXTURE_NAMES.to_vec() } else { vec![name] };
            for n in names {
                load(n.to_string(), entry.clone(), standard_image(n));
            }
            continue;
        }
        let path = Path::new(entry);
        if path.is_dir() {
            let mut files: Vec<PathBuf> = match fs::read_dir(path) {
                Ok(rd) => rd
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
                    .collect(),
                Err(e) => {
                    load(String::new(), entry.clone(), Err(e.into()));
                    continue;
                }
            };
            files.sort();
            for f in files {
                load(stem(&f), f.display().to_string(), load_pgm(&f));
            }
        } else {
            load(stem(path), entry.clone(), load_pgm(path));
        }
    }
    (images, failures)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

#[derive(Serialize)]
struct IterationRow {
    iteration: usize,
    neg_log_likelihood: f64,
    synthesis_energy: f64,
    relative_change: f64,
    psnr: Option<f64>,
    level: f64,
    ratios: String,
    sigmas: String,
}

impl From<&IterationRecord> for IterationRow {
    fn from(r: &IterationRecord) -> Self {
        Self {
            iteration: r.iteration,
            neg_log_likelihood: r.neg_log_likelihood,
            synthesis_energy: r.synthesis_energy,
            relative_change: r.relative_change,
            psnr: r.psnr,
            level: r.level,
            ratios: join(&r.ratios),
            sigmas: join(&r.sigmas),
        }
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

fn run_cell(name: &str, clean: &Image, seed: u64, cfg: &ExperimentConfig) -> Result<CellResult> {
    let (noisy, reference) = match &cfg.noise {
        Some(spec) => (synthesize(clean, &spec.with_seed(seed))?.noisy, Some(clean)),
        None => (clean.clone(), None),
    };
    let (u, state) = restore(&noisy, &cfg.solver, reference)?;
    let tag = format!("{name}_s{seed}");
    if cfg.emit.restored {
        save_pgm(&u, cfg.output.join("restored").join(format!("{tag}.pgm")))?;
    }
    if cfg.emit.noisy {
        save_pgm(&noisy, cfg.output.join("noisy").join(format!("{tag}.pgm")))?;
    }
    if cfg.emit.weights {
        for k in 0..state.w.components() {
            let path = cfg.output.join("weights").join(format!("{tag}_w{}.pgm", k + 1));
            save_pgm(&state.w.map_image(k), path)?;
        }
    }
    if cfg.emit.iterations {
        let rows: Vec<IterationRow> = state.history.iter().map(IterationRow::from).collect();
        write_csv(&cfg.output.join("iterations").join(format!("{tag}.csv")), &rows)?;
    }
    let (noisy_psnr, restored_psnr) = match reference {
        Some(c) => (psnr(c, &noisy)?, psnr(c, &u)?),
        None => (f64::NAN, f64::NAN),
    };
    Ok(CellResult {
        image: name.to_string(),
        seed,
        noisy_psnr,
        restored_psnr,
        iterations: state.iteration,
        converged: state.converged(cfg.solver.zeta),
        ratios: join(state.params.ratios()),
        sigmas: join(&state.params.sigmas_255()),
        seconds: state.history.iter().map(|r| r.seconds).sum(),
    })
}

/// Runs every `(image, seed)` cell, in parallel, and writes the artifacts
/// selected by `cfg.emit`. Fails only when nothing could be run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let (images, mut failures) = collect_inputs(&cfg.input);
    if images.is_empty() {
        return Err(Error::Argument("no readable input images".into()));
    }
    let seeds: &[u64] = if cfg.noise.is_some() { &cfg.seeds } else { &cfg.seeds[..1] };
    fs::create_dir_all(&cfg.output)?;
    for (dir, on) in [
        ("restored", cfg.emit.restored),
        ("noisy", cfg.emit.noisy),
        ("weights", cfg.emit.weights),
        ("iterations", cfg.emit.iterations),
    ] {
        if on {
            fs::create_dir_all(cfg.output.join(dir))?;
        }
    }

    let jobs: Vec<(usize, u64)> = (0..images.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let outcomes: Vec<Result<CellResult>> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let (name, img) = &images[i];
            info!("running {name} seed {seed}");
            run_cell(name, img, seed, cfg)
        })
        .collect();

    let mut cells = Vec::new();
    for ((i, seed), out) in jobs.iter().zip(outcomes) {
        match out {
            Ok(c) => cells.push(c),
            Err(e) => {
                let source = format!("{} seed {seed}", images[*i].0);
                warn!("{source} failed: {e}");
                failures.push((source, e.to_string()));
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::Argument("every run failed".into()));
    }

    let rows = summarize(&images, &cells);
    if cfg.emit.summary {
        write_csv(&cfg.output.join("summary.csv"), &rows)?;
        write_csv(&cfg.output.join("cells.csv"), &cells)?;
        fs::write(cfg.output.join("summary.txt"), format_table(&rows))?;
    }
    Ok(Report { rows, cells, failures })
}

fn per_10(seconds: f64, iterations: usize) -> f64 {
    if iterations == 0 {
        0.0
    } else {
        10.0 * seconds / iterations as f64
    }
}

fn summarize(images: &[(String, Image)], cells: &[CellResult]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for (name, _) in images {
        let mine: Vec<&CellResult> = cells.iter().filter(|c| &c.image == name).collect();
        if mine.is_empty() || rows.iter().any(|r: &SummaryRow| &r.image == name) {
            continue;
        }
        let n = mine.len() as f64;
        let mean = |f: &dyn Fn(&CellResult) -> f64| mine.iter().map(|c| f(c)).sum::<f64>() / n;
        let seconds: f64 = mine.iter().map(|c| c.seconds).sum();
        let iterations: usize = mine.iter().map(|c| c.iterations).sum();
        rows.push(SummaryRow {
            image: name.clone(),
            seeds: mine.len(),
            noisy_psnr: mean(&|c| c.noisy_psnr),
            restored_psnr: mean(&|c| c.restored_psnr),
            iterations: mean(&|c| c.iterations as f64),
            seconds_per_10_iters: per_10(seconds, iterations),
        });
    }
    rows
}

/// Plain-text table of the summary rows.
pub fn format_table(rows: &[SummaryRow]) -> String {
    let header = ["image", "seeds", "noisy dB", "restored dB", "gain dB", "iters", "s/10 iters"];
    let body: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            [
                r.image.clone(),
                r.seeds.to_string(),
                format!("{:.2}", r.noisy_psnr),
                format!("{:.2}", r.restored_psnr),
                format!("{:.2}", r.restored_psnr - r.noisy_psnr),
                format!("{:.1}", r.iterations),
                format!("{:.2}", r.seconds_per_10_iters),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: Vec<&str>| {
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(out, "{c:<w$}");
            } else {
                let _ = write!(out, "  {c:>w$}");
            }
        }
        out.push('\n');
    };
    line(&mut out, header.to_vec());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&mut out, rule.iter().map(String::as_str).collect());
    for row in &body {
        line(&mut out, row.iter().map(String::as_str).collect());
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub noisy_psnr: f64,
    pub restored_psnr: f64,
}

/// Noise spec with the swept parameter set to `value`.
pub fn sweep_spec(base: &NoiseSpec, axis: SweepAxis, value: f64) -> Result<NoiseSpec> {
    let mut spec = base.clone();
    match axis {
        SweepAxis::Sigma2 => {
            if spec.kind != NoiseKind::GaussianMixture || spec.sigmas.len() < 2 {
                return Err(Error::Config("sigma2 sweeps need a gaussian mixture with two or more components".into()));
            }
            spec.sigmas[1] = value;
        }
        SweepAxis::Ratio => {
            if spec.ratios.len() != 2 {
                return Err(Error::Config("ratio sweeps need exactly two components".into()));
            }
            spec.ratios = vec![value, 1.0 - value];
        }
    }
    spec.validate().map_err(to_config)?;
    Ok(spec)
}

/// Runs one experiment per value of the swept parameter and writes
/// `sweep.csv` with the means over images and seeds.
pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<(Vec<SweepPoint>, Vec<Report>)> {
    let base = cfg
        .noise
        .as_ref()
        .ok_or_else(|| Error::Config("a sweep needs a noise model".into()))?;
    if values.is_empty() {
        return Err(Error::Config("sweep has no values".into()));
    }
    let specs = values
        .iter()
        .map(|&v| sweep_spec(base, axis, v))
        .collect::<Result<Vec<_>>>()?;
    let mut points = Vec::new();
    let mut reports = Vec::new();
    for (&value, spec) in values.iter().zip(specs) {
        let sub = ExperimentConfig {
            noise: Some(spec),
            output: cfg.output.join(format!("{}_{value}", axis_name(axis))),
            sweep: None,
            ..cfg.clone()
        };
        let report = run_experiment(&sub)?;
        let n = report.cells.len() as f64;
        points.push(SweepPoint {
            value,
            noisy_psnr: report.cells.iter().map(|c| c.noisy_psnr).sum::<f64>() / n,
            restored_psnr: report.cells.iter().map(|c| c.restored_psnr).sum::<f64>() / n,
        });
        reports.push(report);
    }
    fs::create_dir_all(&cfg.output)?;
    write_csv(&cfg.output.join("sweep.csv"), &points)?;
    Ok((points, reports))
}

fn axis_name(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::Sigma2 => "sigma2",
        SweepAxis::Ratio => "ratio",
    }
}
