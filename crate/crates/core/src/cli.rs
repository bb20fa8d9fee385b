//! Experiment runner: config files, named presets, per-run artifacts and
//! summary tables.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, EvalReport};
use crate::network::XavierScheme;
use crate::optim::OptimizerKind;
use crate::problems::{OuterBoundary, ProblemId};
use crate::svg;
use crate::trainer::{self, Experiment, TrainConfig, TrainingLog};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_VAR: &str = "CDR_PINN_OUT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";

/// Every key accepted in config files and overrides.
pub const CONFIG_KEYS: [&str; 20] = [
    "problem",
    "epsilon",
    "depth",
    "width",
    "optimizer",
    "lr",
    "batch_size",
    "iterations",
    "lambda",
    "G",
    "K",
    "seed",
    "curriculum",
    "densify",
    "n_interior",
    "n_boundary",
    "log_period",
    "init",
    "rot_outer",
    "check_invariants",
];

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

/// Parses flat `key=value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Parses command-line overrides of the form `--key=value` or `key=value`.
/// Repeating a key with a different value is an error.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut seen: BTreeMap<String, String> = BTreeMap::new();
    let mut pairs = Vec::new();
    for arg in args {
        let body = arg.trim_start_matches("--");
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override `{arg}` is not key=value")))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if let Some(prev) = seen.get(&k) {
            if *prev != v {
                return Err(Error::config(format!(
                    "conflicting overrides for `{k}`: `{prev}` and `{v}`"
                )));
            }
            continue;
        }
        seen.insert(k.clone(), v.clone());
        pairs.push((k, v));
    }
    Ok(pairs)
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("`{key}` expects on/off, got `{v}`"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("`{key}` cannot be parsed from `{v}`")))
}

/// Sets one field of `config`.
pub fn apply_key(config: &mut TrainConfig, key: &str, v: &str) -> Result<()> {
    match key {
        "problem" => config.problem = v.parse()?,
        "epsilon" => config.epsilon = parse_num(key, v)?,
        "depth" => config.depth = parse_num(key, v)?,
        "width" => config.width = parse_num(key, v)?,
        "optimizer" => config.optimizer = v.parse::<OptimizerKind>()?,
        "lr" => config.lr = parse_num(key, v)?,
        "batch_size" => config.batch_size = parse_num(key, v)?,
        "iterations" => config.iterations = parse_num::<f64>(key, v).and_then(|x| as_count(key, x))?,
        "lambda" => config.lambda = parse_num(key, v)?,
        "G" => config.g = parse_num(key, v)?,
        "K" => config.k = parse_num(key, v)?,
        "seed" => config.seed = parse_num(key, v)?,
        "curriculum" => config.curriculum = parse_bool(key, v)?,
        "densify" => config.densify = parse_bool(key, v)?,
        "n_interior" => config.n_interior = parse_num::<f64>(key, v).and_then(|x| as_count(key, x))?,
        "n_boundary" => config.n_boundary = parse_num::<f64>(key, v).and_then(|x| as_count(key, x))?,
        "log_period" => config.log_period = parse_num(key, v)?,
        "init" => config.init = v.parse::<XavierScheme>()?,
        "rot_outer" => config.rot_outer = v.parse::<OuterBoundary>()?,
        "check_invariants" => config.check_invariants = parse_bool(key, v)?,
        other => return Err(Error::config(format!("unknown config key `{other}`"))),
    }
    Ok(())
}

/// Counts may be written in scientific notation (`1.5e5`).
fn as_count(key: &str, x: f64) -> Result<usize> {
    if x >= 0.0 && x.fract() == 0.0 && x < 1e15 {
        Ok(x as usize)
    } else {
        Err(Error::config(format!("`{key}` must be a nonnegative integer, got {x}")))
    }
}

/// Builds a config from key/value pairs. `problem` and `epsilon` select the
/// benchmark defaults; remaining keys are applied on top.
pub fn resolve_config(pairs: &[(String, String)]) -> Result<TrainConfig> {
    let get = |k: &str| pairs.iter().rev().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
    let problem: ProblemId = get("problem").unwrap_or("p1d").parse()?;
    let epsilon = match get("epsilon") {
        Some(v) => parse_num("epsilon", v)?,
        None => 1e-3,
    };
    let mut config = TrainConfig::for_problem(problem, epsilon);
    for (k, v) in pairs {
        apply_key(&mut config, k, v)?;
    }
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PresetRun {
    /// Directory name of the run inside the preset directory.
    pub name: String,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPreset {
    pub name: String,
    pub description: String,
    pub runs: Vec<PresetRun>,
    /// Set for the 1D sampling experiments run through `diagnose`.
    pub diagnostic: Option<Experiment>,
}

const SWEEP_EPS: [f64; 3] = [1e-3, 1e-6, 1e-9];
const TABLE3_EPS: [f64; 4] = [1.0, 1e-3, 1e-6, 1e-9];
const SENSITIVITY_G: [f64; 4] = [1.0, 10.0, 20.0, 30.0];

fn eps_label(eps: f64) -> String {
    let k = eps.log10().round() as i32;
    if eps == 1.0 {
        "1".to_string()
    } else if format!("1e{k}").parse::<f64>() == Ok(eps) {
        format!("1e{k}")
    } else {
        format!("{eps:e}")
    }
}

/// `<problem>_eps<ε>_<method>`.
fn run_name(c: &TrainConfig) -> String {
    let method = if c.curriculum { "curriculum" } else { "pinn" };
    format!("{}_eps{}_{method}", c.problem, eps_label(c.epsilon))
}

/// Benchmark config with the iteration budget cut to CI scale unless
/// `full_scale`.
fn base(problem: ProblemId, eps: f64, full_scale: bool) -> TrainConfig {
    let mut c = TrainConfig::for_problem(problem, eps);
    if !full_scale {
        match problem {
            ProblemId::P1d => c.iterations = 50_000,
            ProblemId::P3d => {
                c.iterations = 20_000;
                c.n_interior = 30_000;
                c.n_boundary = 6_000;
            }
            _ => c.iterations = 100_000,
        }
    }
    c
}

fn pair(problem: ProblemId, eps: f64, full_scale: bool) -> Vec<PresetRun> {
    let ours = base(problem, eps, full_scale);
    let mut pinn = ours.clone();
    pinn.curriculum = false;
    let stem = format!("{}_eps{}", problem, eps_label(eps));
    vec![
        PresetRun {
            name: format!("{stem}_curriculum"),
            config: ours,
        },
        PresetRun {
            name: format!("{stem}_pinn"),
            config: pinn,
        },
    ]
}

fn preset_names() -> Vec<(String, String)> {
    let mut v = Vec::new();
    for id in ProblemId::BENCHMARKS {
        v.push((id.to_string(), format!("single curriculum run on {id}, eps=1e-3")));
    }
    for eps in TABLE3_EPS {
        v.push((
            format!("table3_eps{}", eps_label(eps)),
            format!("p1d at eps={}: curriculum vs plain PINN", eps_label(eps)),
        ));
    }
    v.push(("table3_full".into(), "p1d eps sweep {1,1e-3,1e-6,1e-9}, both methods".into()));
    for eps in SWEEP_EPS {
        v.push((
            format!("table4_eps{}", eps_label(eps)),
            format!("p2d_bl at eps={}: curriculum vs plain PINN", eps_label(eps)),
        ));
    }
    v.push(("table4_full".into(), "p2d_bl eps sweep {1e-3,1e-6,1e-9}, both methods".into()));
    for (id, what) in [
        (ProblemId::P2dIl, "interior layer"),
        (ProblemId::P2dL, "L-shaped domain"),
        (ProblemId::P2dRot, "rotating flow"),
    ] {
        v.push((
            format!("{id}_sweep"),
            format!("{what} eps sweep {{1e-3,1e-6,1e-9}}, both methods"),
        ));
    }
    for eps in SWEEP_EPS {
        v.push((
            format!("table7_eps{}", eps_label(eps)),
            format!("p3d at eps={} with wall time", eps_label(eps)),
        ));
    }
    v.push(("table7_full".into(), "p3d eps sweep {1e-3,1e-6,1e-9} with wall time".into()));
    v.push(("sensitivity_G".into(), "p1d eps=1e-9 with G in {1,10,20,30}".into()));
    for e in [
        Experiment::LossDistribution,
        Experiment::DenseLayerSampling,
        Experiment::RegionRejection,
    ] {
        v.push((format!("diag_{e}"), format!("1D {e} experiment (use `diagnose`)")));
    }
    v
}

/// `(name, description)` of every preset.
pub fn list_presets() -> Vec<(String, String)> {
    preset_names()
}

/// Resolves a preset name.
pub fn preset(name: &str, full_scale: bool) -> Result<ExperimentPreset> {
    let description = preset_names()
        .into_iter()
        .find(|(n, _)| n == name)
        .map(|(_, d)| d)
        .ok_or_else(|| Error::UnknownPreset(name.to_string()))?;
    let eps_from = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::UnknownPreset(name.to_string()))
    };
    let mut diagnostic = None;
    let runs = if let Ok(id) = name.parse::<ProblemId>() {
        let config = base(id, 1e-3, full_scale);
        vec![PresetRun {
            name: run_name(&config),
            config,
        }]
    } else if let Some(e) = name.strip_prefix("table3_eps") {
        pair(ProblemId::P1d, eps_from(e)?, full_scale)
    } else if name == "table3_full" {
        TABLE3_EPS.iter().flat_map(|&e| pair(ProblemId::P1d, e, full_scale)).collect()
    } else if let Some(e) = name.strip_prefix("table4_eps") {
        pair(ProblemId::P2dBl, eps_from(e)?, full_scale)
    } else if name == "table4_full" {
        SWEEP_EPS.iter().flat_map(|&e| pair(ProblemId::P2dBl, e, full_scale)).collect()
    } else if let Some(id) = name.strip_suffix("_sweep") {
        let id: ProblemId = id.parse()?;
        SWEEP_EPS.iter().flat_map(|&e| pair(id, e, full_scale)).collect()
    } else if let Some(e) = name.strip_prefix("table7_eps") {
        let eps = eps_from(e)?;
        vec![PresetRun {
            name: format!("p3d_eps{}_curriculum", eps_label(eps)),
            config: base(ProblemId::P3d, eps, full_scale),
        }]
    } else if name == "table7_full" {
        SWEEP_EPS
            .iter()
            .map(|&eps| PresetRun {
                name: format!("p3d_eps{}_curriculum", eps_label(eps)),
                config: base(ProblemId::P3d, eps, full_scale),
            })
            .collect()
    } else if name == "sensitivity_G" {
        SENSITIVITY_G
            .iter()
            .map(|&g| {
                let mut c = base(ProblemId::P1d, 1e-9, full_scale);
                c.g = g;
                PresetRun {
                    name: format!("p1d_eps1e-9_G{g}"),
                    config: c,
                }
            })
            .collect()
    } else if let Some(e) = name.strip_prefix("diag_") {
        let experiment: Experiment = e.parse()?;
        diagnostic = Some(experiment);
        vec![PresetRun {
            name: name.to_string(),
            config: diagnostic_config(full_scale),
        }]
    } else {
        return Err(Error::UnknownPreset(name.to_string()));
    };
    Ok(ExperimentPreset {
        name: name.to_string(),
        description,
        runs,
        diagnostic,
    })
}

/// Plain-PINN 1D setup used by the sampling experiments.
pub fn diagnostic_config(full_scale: bool) -> TrainConfig {
    let mut c = TrainConfig::for_problem(ProblemId::P1d, 1e-3);
    c.curriculum = false;
    if !full_scale {
        c.iterations = 20_000;
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub preset: String,
    pub run: String,
    pub config: TrainConfig,
    pub version: String,
    pub wall_seconds: f64,
}

impl RunMeta {
    pub fn method(&self) -> &'static str {
        if self.config.curriculum {
            "curriculum"
        } else {
            "pinn"
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub svg: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { svg: true }
    }
}

/// Grid resolution per spatial dimension of `prediction_grid.csv`.
pub fn grid_resolution(dim: usize) -> usize {
    match dim {
        1 => 1001,
        2 => 101,
        _ => 21,
    }
}

/// Trains one config and writes all artifacts into `dir`.
pub fn execute_run(
    preset: &str,
    run: &PresetRun,
    dir: &Path,
    options: RunOptions,
) -> Result<(RunMeta, EvalReport)> {
    std::fs::create_dir_all(dir)?;
    let config = &run.config;
    let mut meta = RunMeta {
        preset: preset.to_string(),
        run: run.name.clone(),
        config: config.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_seconds: 0.0,
    };
    let start = Instant::now();
    let (model, mut log) = match trainer::train(config) {
        Ok(v) => v,
        Err(Error::Diverged(d)) => {
            if let Some(log) = &d.log {
                write_log(log, dir)?;
            }
            if let Some(m) = &d.last_good {
                m.save(&dir.join("checkpoint.bin"))?;
            }
            meta.wall_seconds = start.elapsed().as_secs_f64();
            std::fs::write(dir.join("run_meta.json"), serde_json::to_string_pretty(&meta)?)?;
            return Err(Error::Diverged(d));
        }
        Err(e) => return Err(e),
    };
    meta.wall_seconds = start.elapsed().as_secs_f64();
    let checkpoint = dir.join("checkpoint.bin");
    model.save(&checkpoint)?;
    log.checkpoint = Some(checkpoint);
    write_log(&log, dir)?;

    let problem = config.build_problem()?;
    let report = metrics::evaluate(&model, &problem, config.seed)?;
    report.write_json(&dir.join("metrics.json"))?;
    let grid = metrics::prediction_grid(&model, &problem, grid_resolution(problem.dim()))?;
    grid.write_csv(std::io::BufWriter::new(std::fs::File::create(
        dir.join("prediction_grid.csv"),
    )?))?;
    std::fs::write(dir.join("run_meta.json"), serde_json::to_string_pretty(&meta)?)?;

    if options.svg {
        let series = [
            svg::Series {
                label: "weighted physical loss",
                points: log.rows.iter().map(|r| (r.t as f64, r.l_phys_w)).collect(),
            },
            svg::Series {
                label: "boundary loss",
                points: log.rows.iter().map(|r| (r.t as f64, r.l_bc)).collect(),
            },
        ];
        std::fs::write(dir.join("loss.svg"), svg::line_plot(&run.name, &series, true))?;
        let u = grid.column("u_pred").expect("grid has predictions");
        if problem.dim() == 1 {
            let mut series = vec![svg::Series {
                label: "prediction",
                points: grid.rows.iter().map(|r| (r[0], r[u])).collect(),
            }];
            if let Some(e) = grid.column("u_exact") {
                series.push(svg::Series {
                    label: "exact",
                    points: grid.rows.iter().map(|r| (r[0], r[e])).collect(),
                });
            }
            std::fs::write(dir.join("prediction.svg"), svg::line_plot(&run.name, &series, false))?;
        } else if problem.dim() == 2 {
            let bbox = problem.domain().bounding_box();
            let cell = (bbox[0].1 - bbox[0].0) / (grid_resolution(2) - 1) as f64;
            let cells: Vec<_> = grid.rows.iter().map(|r| (r[0], r[1], r[u])).collect();
            std::fs::write(dir.join("prediction.svg"), svg::heatmap(&run.name, &cells, cell))?;
            if let Some(e) = grid.column("abs_err") {
                let cells: Vec<_> = grid.rows.iter().map(|r| (r[0], r[1], r[e])).collect();
                std::fs::write(dir.join("abs_error.svg"), svg::heatmap(&run.name, &cells, cell))?;
            }
        }
    }
    Ok((meta, report))
}

fn write_log(log: &TrainingLog, dir: &Path) -> Result<()> {
    let f = std::fs::File::create(dir.join("loss_history.csv"))?;
    log.write_csv(std::io::BufWriter::new(f))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub dir: PathBuf,
    pub meta: RunMeta,
    pub report: EvalReport,
}

/// Loads `run_meta.json` and `metrics.json` from each directory; rows are
/// sorted by `(problem, ε)`. Any unreadable directory fails the whole call
/// with the list of offenders.
pub fn summarize(dirs: &[PathBuf]) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    let mut bad = Vec::new();
    for dir in dirs {
        let load = || -> std::result::Result<SummaryRow, String> {
            let meta_text = std::fs::read_to_string(dir.join("run_meta.json"))
                .map_err(|e| format!("run_meta.json: {e}"))?;
            let meta: RunMeta =
                serde_json::from_str(&meta_text).map_err(|e| format!("run_meta.json: {e}"))?;
            let report = EvalReport::read_json(&dir.join("metrics.json"))
                .map_err(|e| format!("metrics.json: {e}"))?;
            Ok(SummaryRow {
                dir: dir.clone(),
                meta,
                report,
            })
        };
        match load() {
            Ok(r) => rows.push(r),
            Err(reason) => bad.push((dir.clone(), reason)),
        }
    }
    if let Some((dir, first)) = bad.first() {
        let others: Vec<String> = bad[1..].iter().map(|(d, _)| d.display().to_string()).collect();
        let reason = if others.is_empty() {
            first.clone()
        } else {
            format!("{first}; also failing: {}", others.join(", "))
        };
        return Err(Error::RunMetadata {
            dir: dir.clone(),
            reason,
        });
    }
    rows.sort_by(|a, b| {
        (a.meta.config.problem.as_str(), a.meta.config.epsilon)
            .partial_cmp(&(b.meta.config.problem.as_str(), b.meta.config.epsilon))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.meta.run.cmp(&b.meta.run))
    });
    Ok(rows)
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "problem,epsilon,method,G,K,iterations,nrmse,max_abs_error,overshoot,undershoot,wall_seconds,run"
    )?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for r in rows {
        let c = &r.meta.config;
        writeln!(
            out,
            "{},{:e},{},{},{},{},{},{},{:e},{:e},{:.3},{}",
            c.problem,
            c.epsilon,
            r.meta.method(),
            c.g,
            c.k,
            c.iterations,
            opt(r.report.nrmse),
            opt(r.report.max_abs_error),
            r.report.overshoot,
            r.report.undershoot,
            r.meta.wall_seconds,
            r.meta.run
        )?;
    }
    out.flush()
}

/// What `run` was pointed at.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Preset(String),
    ConfigFile(PathBuf),
}

impl Target {
    pub fn parse(s: &str) -> Target {
        let p = Path::new(s);
        if p.is_file() || s.ends_with(".json") || s.ends_with(".cfg") || s.ends_with(".conf") || s.ends_with(".txt") {
            Target::ConfigFile(p.to_path_buf())
        } else {
            Target::Preset(s.to_string())
        }
    }
}

/// Resolves a run target plus overrides into a preset.
pub fn resolve_target(target: &Target, overrides: &[(String, String)], full_scale: bool) -> Result<ExperimentPreset> {
    match target {
        Target::Preset(name) => {
            let mut p = preset(name, full_scale)?;
            let single_problem = name.parse::<ProblemId>().is_ok();
            for run in &mut p.runs {
                for (k, v) in overrides {
                    apply_key(&mut run.config, k, v)?;
                }
                run.config.validate()?;
                if single_problem {
                    run.name = run_name(&run.config);
                }
            }
            if !overrides.is_empty() && p.runs.len() > 1 {
                let mut names: Vec<&str> = p.runs.iter().map(|r| r.name.as_str()).collect();
                names.sort_unstable();
                names.dedup();
                if names.len() != p.runs.len() {
                    return Err(Error::config("overrides made preset run names collide"));
                }
            }
            Ok(p)
        }
        Target::ConfigFile(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("config")
                .to_string();
            let (mut config, name) = if path.extension().is_some_and(|e| e == "json") {
                let meta: RunMeta = serde_json::from_str(&text)
                    .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
                (meta.config, meta.run)
            } else {
                (resolve_config(&parse_key_values(&text)?)?, stem.clone())
            };
            for (k, v) in overrides {
                apply_key(&mut config, k, v)?;
            }
            config.validate()?;
            Ok(ExperimentPreset {
                name: stem,
                description: format!("config file {}", path.display()),
                runs: vec![PresetRun { name, config }],
                diagnostic: None,
            })
        }
    }
}

/// Runs every config of a preset under `root/<preset>/<run>` and writes the
/// preset's `summary.csv`.
pub fn run_preset(preset: &ExperimentPreset, root: &Path, options: RunOptions) -> Result<Vec<SummaryRow>> {
    let preset_dir = root.join(&preset.name);
    if let Some(experiment) = preset.diagnostic {
        let run = &preset.runs[0];
        let report = trainer::run_diagnostics(&run.config, experiment, &preset_dir)?;
        for f in &report.files {
            log::info!("wrote {}", f.display());
        }
        return Ok(Vec::new());
    }
    let mut dirs = Vec::new();
    for run in &preset.runs {
        let dir = preset_dir.join(&run.name);
        log::info!("running {} -> {}", run.name, dir.display());
        let (_, report) = execute_run(&preset.name, run, &dir, options)?;
        log::info!(
            "{}: nrmse={:?} overshoot={:e} undershoot={:e}",
            run.name,
            report.nrmse,
            report.overshoot,
            report.undershoot
        );
        dirs.push(dir);
    }
    let rows = summarize(&dirs)?;
    let f = std::fs::File::create(preset_dir.join("summary.csv"))?;
    write_summary(&rows, std::io::BufWriter::new(f))?;
    Ok(rows)
}
