//! The training loop: minibatching, periodic threshold updates, weighted loss
//! assembly, optimizer steps and logging.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{DerivOrder, JetTape, PointDerivs};
use crate::curriculum::{self, CurriculumState, WeightedBatch};
use crate::error::{Divergence, Error, Result};
use crate::network::{init_xavier, MlpModel, XavierScheme};
use crate::optim::{Optimizer, OptimizerKind};
use crate::problems::{OuterBoundary, PdeProblem, ProblemId};
use crate::sampling::{self, Batcher, Points, TrainSet};

/// Fraction of the interior set used as the threshold subset.
pub const SUBSET_FRACTION: f64 = 0.2;
/// Iterations trained on the uniform half before densification.
pub const DENSIFY_WARMUP: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub problem: ProblemId,
    pub epsilon: f64,
    /// Number of hidden layers.
    pub depth: usize,
    pub width: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub iterations: usize,
    /// Weight of the boundary term.
    pub lambda: f64,
    /// Gradient cutoff for the memory bank.
    #[serde(rename = "G")]
    pub g: f64,
    /// Threshold update period.
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub curriculum: bool,
    pub densify: bool,
    pub n_interior: usize,
    pub n_boundary: usize,
    pub log_period: usize,
    #[serde(default)]
    pub init: XavierScheme,
    #[serde(default)]
    pub rot_outer: OuterBoundary,
    /// Spot-check `w·r² ≤ β` on about 1% of batches.
    #[serde(default)]
    pub check_invariants: bool,
}

impl TrainConfig {
    /// Benchmark defaults for a problem: network, optimizer and sample counts
    /// of the reference setup, curriculum on.
    pub fn for_problem(problem: ProblemId, epsilon: f64) -> Self {
        let (depth, batch_size, lr, iterations, n_interior, n_boundary) = match problem {
            ProblemId::P1d | ProblemId::Synthetic => (3, 50, 0.001, 150_000, 2500, 2),
            ProblemId::P2dBl => (5, 200, 0.01, 1_500_000, 20_000, 400),
            ProblemId::P2dIl | ProblemId::P2dL => (3, 200, 0.01, 1_000_000, 20_000, 400),
            ProblemId::P2dRot => (3, 200, 0.005, 1_500_000, 20_000, 400),
            ProblemId::P3d => (5, 500, 0.01, 1_000_000, 300_000, 60_000),
        };
        let dim = match problem {
            ProblemId::P1d | ProblemId::Synthetic => 1,
            ProblemId::P3d => 3,
            _ => 2,
        };
        Self {
            problem,
            epsilon,
            depth,
            width: 20,
            optimizer: OptimizerKind::Adam,
            lr,
            batch_size,
            iterations,
            lambda: 1.0,
            g: curriculum::default_cutoff(dim),
            k: curriculum::DEFAULT_PERIOD,
            seed: 0,
            curriculum: true,
            densify: dim > 1,
            n_interior,
            n_boundary,
            log_period: 100,
            init: XavierScheme::Normal,
            rot_outer: OuterBoundary::Dirichlet,
            check_invariants: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epsilon", self.epsilon),
            ("lr", self.lr),
            ("G", self.g),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        let counts = [
            ("width", self.width),
            ("batch_size", self.batch_size),
            ("iterations", self.iterations),
            ("K", self.k),
            ("n_interior", self.n_interior),
            ("log_period", self.log_period),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if self.problem == ProblemId::Synthetic {
            return Err(Error::config("the synthetic problem cannot be built from a config"));
        }
        if self.epsilon > 1.0 {
            return Err(Error::config(format!("epsilon must be in (0, 1], got {}", self.epsilon)));
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<PdeProblem> {
        let p = PdeProblem::new(self.problem, self.epsilon)?;
        Ok(if self.problem == ProblemId::P2dRot {
            p.with_outer_boundary(self.rot_outer)
        } else {
            p
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: usize,
    /// Weighted physical loss of the batch.
    pub l_phys_w: f64,
    /// Unweighted mean squared residual of the batch.
    pub l_phys_raw: f64,
    pub l_bc: f64,
    pub beta: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
    pub checkpoint: Option<PathBuf>,
    /// Batches on which the weighted-contribution bound was verified.
    pub invariant_checks: usize,
}

impl TrainingLog {
    pub fn push(&mut self, row: LogRow) {
        debug_assert!(self.rows.last().is_none_or(|r| r.t < row.t));
        self.rows.push(row);
    }

    pub fn last(&self) -> Option<&LogRow> {
        self.rows.last()
    }

    /// The row logged at iteration `t`, if any.
    pub fn at(&self, t: usize) -> Option<&LogRow> {
        self.rows.iter().find(|r| r.t == t)
    }

    /// Rows compared without the wall-clock column.
    pub fn same_trajectory(&self, other: &TrainingLog) -> bool {
        self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                a.t == b.t
                    && a.l_phys_w.to_bits() == b.l_phys_w.to_bits()
                    && a.l_phys_raw.to_bits() == b.l_phys_raw.to_bits()
                    && a.l_bc.to_bits() == b.l_bc.to_bits()
                    && a.beta.to_bits() == b.beta.to_bits()
            })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,L_phys_w,L_phys_raw,L_bc,beta,wall_ms")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{:e},{:e},{:e},{:e},{:.3}",
                r.t, r.l_phys_w, r.l_phys_raw, r.l_bc, r.beta, r.wall_ms
            )?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut log = TrainingLog::default();
        for (n, line) in text.lines().enumerate().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::config(format!("{}: malformed row {}", path.display(), n + 1));
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            log.rows.push(LogRow {
                t: f[0].parse().map_err(|_| bad())?,
                l_phys_w: num(f[1])?,
                l_phys_raw: num(f[2])?,
                l_bc: num(f[3])?,
                beta: num(f[4])?,
                wall_ms: num(f[5])?,
            });
        }
        Ok(log)
    }
}

/// Per-iteration quantities of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    pub total: f64,
    pub l_phys_w: f64,
    pub l_phys_raw: f64,
    pub l_bc: f64,
}

/// Records a batch plus all boundary points on `tape` and returns the loss
/// and its parameter gradient. Weights are held constant in the gradient.
pub fn batch_loss_and_gradient(
    tape: &mut JetTape,
    model: &MlpModel,
    problem: &PdeProblem,
    interior: &Points,
    batch: &[usize],
    boundary: &Points,
    beta: f64,
    lambda: f64,
) -> Result<(StepLoss, crate::autodiff::ParamGradient, WeightedBatch)> {
    tape.clear();
    for &i in batch {
        tape.record(model, interior.get(i), DerivOrder::Second)?;
    }
    for x in boundary.iter() {
        tape.record(model, x, DerivOrder::Value)?;
    }
    let n = batch.len();
    let outputs = tape.outputs();
    let residuals: Vec<f64> = batch
        .iter()
        .zip(outputs)
        .map(|(&i, d)| problem.residual_from_derivs(interior.get(i), d))
        .collect();
    let weighted = WeightedBatch::new(batch.to_vec(), residuals, beta);
    let phys = weighted.loss();
    let bc: Vec<f64> = boundary
        .iter()
        .zip(&outputs[n..])
        .map(|(x, d)| d.value - problem.boundary_value(x))
        .collect();
    let m = bc.len().max(1) as f64;
    let l_bc = bc.iter().map(|b| b * b).sum::<f64>() / m;
    let loss = StepLoss {
        total: phys.value + lambda * l_bc,
        l_phys_w: phys.value,
        l_phys_raw: weighted.unweighted_loss(),
        l_bc,
    };

    let mut adjoints = Vec::with_capacity(outputs.len());
    for ((&i, r), w) in batch.iter().zip(&weighted.residuals).zip(&weighted.weights) {
        let coeff = 2.0 * w * r / phys.normalizer;
        let coeff = if phys.fell_back { 2.0 * r / phys.normalizer } else { coeff };
        let mut a = problem.residual_linearization(interior.get(i));
        a.value *= coeff;
        for k in 0..a.dim {
            a.grad[k] *= coeff;
            a.second[k] *= coeff;
        }
        adjoints.push(a);
    }
    for b in &bc {
        let mut a = PointDerivs::zero(problem.dim());
        a.value = 2.0 * lambda * b / m;
        adjoints.push(a);
    }
    let (_, grad) = tape.param_gradient(model, |_| (loss.total, adjoints))?;
    Ok((loss, grad, weighted))
}

/// Mutable state of one run.
struct Run<'a> {
    config: &'a TrainConfig,
    problem: &'a PdeProblem,
    model: MlpModel,
    optimizer: Optimizer,
    tape: JetTape,
    log: TrainingLog,
    start: Instant,
}

impl Run<'_> {
    fn diverged(self, t: usize, sample: Vec<f64>, last_good: MlpModel) -> Error {
        Error::Diverged(Box::new(Divergence {
            iteration: t,
            sample,
            last_good: Some(last_good),
            log: Some(self.log),
        }))
    }

    /// Trains on `set` for iterations `t_begin..t_end`.
    fn phase(mut self, set: &TrainSet, t_begin: usize, t_end: usize) -> Result<Self> {
        let c = self.config;
        let mut state = CurriculumState::new(c.g, c.k, set.subset_idx.clone())?;
        let mut batcher = Batcher::new(set.interior.len(), c.batch_size, c.seed ^ t_begin as u64);
        let mut first = true;
        for t in t_begin..t_end {
            if c.curriculum && (first || state.is_due(t)) {
                state.update_threshold(&self.model, self.problem, &set.interior)?;
            }
            first = false;
            let beta = if c.curriculum { state.beta } else { f64::INFINITY };
            let batch = batcher.next_batch();
            let step = batch_loss_and_gradient(
                &mut self.tape,
                &self.model,
                self.problem,
                &set.interior,
                batch,
                &set.boundary,
                beta,
                c.lambda,
            );
            let (loss, grad, weighted) = match step {
                Ok(v) => v,
                Err(Error::Diverged(d)) => {
                    let model = self.model.clone();
                    return Err(self.diverged(t, d.sample, model));
                }
                Err(e) => return Err(e),
            };
            if c.check_invariants && c.curriculum && t % 100 == 0 {
                check_contribution_bound(&weighted, t)?;
                self.log.invariant_checks += 1;
            }
            if t % c.log_period == 0 || t + 1 == c.iterations {
                self.log.push(LogRow {
                    t,
                    l_phys_w: loss.l_phys_w,
                    l_phys_raw: loss.l_phys_raw,
                    l_bc: loss.l_bc,
                    beta,
                    wall_ms: self.start.elapsed().as_secs_f64() * 1e3,
                });
            }
            let before = self.model.clone();
            match self.optimizer.step(&mut self.model, &grad) {
                Ok(()) => {}
                Err(Error::Diverged(d)) => return Err(self.diverged(t, d.sample, before)),
                Err(e) => return Err(e),
            }
            if !self.model.all_finite() {
                return Err(self.diverged(t, Vec::new(), before));
            }
        }
        Ok(self)
    }
}

fn check_contribution_bound(batch: &WeightedBatch, t: usize) -> Result<()> {
    for (w, r) in batch.weights.iter().zip(&batch.residuals) {
        let r2 = r * r;
        let c = curriculum::weighted_contribution(batch.beta, r2);
        if c > batch.beta || w * r2 > batch.beta * (1.0 + 4.0 * f64::EPSILON) {
            return Err(Error::config(format!(
                "iteration {t}: weighted contribution {c:e} exceeds threshold {:e}",
                batch.beta
            )));
        }
    }
    Ok(())
}

/// Initializes a network, builds the training set and runs the loop.
pub fn train(config: &TrainConfig) -> Result<(MlpModel, TrainingLog)> {
    config.validate()?;
    let problem = config.build_problem()?;
    let model = init_xavier(problem.dim(), config.depth, config.width, config.init, config.seed)?;
    if !config.densify {
        let mut set = sampling::sample_uniform(&problem, config.n_interior, config.n_boundary, config.seed);
        set.subset_idx = sampling::pick_subset(set.interior.len(), SUBSET_FRACTION, config.seed);
        return train_on(config, &problem, &set, model);
    }

    // Warm up on a uniform half, then densify around high-residual points.
    let half = (config.n_interior / 2).max(1);
    let mut set = sampling::sample_uniform(&problem, half, config.n_boundary, config.seed);
    set.subset_idx = sampling::pick_subset(set.interior.len(), SUBSET_FRACTION, config.seed);
    let warmup = DENSIFY_WARMUP.min(config.iterations / 2);
    let run = Run {
        config,
        problem: &problem,
        optimizer: Optimizer::new(config.optimizer, &model, config.lr),
        model,
        tape: JetTape::new(),
        log: TrainingLog::default(),
        start: Instant::now(),
    };
    let run = run.phase(&set, 0, warmup)?;

    let mut probe = CurriculumState::new(config.g, config.k, set.subset_idx.clone())?;
    probe.update_threshold(&run.model, &problem, &set.interior)?;
    let mut dense = sampling::densify(set, &problem, &run.model, probe.beta, config.n_interior, config.seed)?;
    dense.subset_idx = sampling::pick_subset(
        dense.interior.len(),
        SUBSET_FRACTION,
        config.seed.wrapping_add(1),
    );
    let run = run.phase(&dense, warmup, config.iterations)?;
    Ok((run.model, run.log))
}

/// Runs the loop from `model` on a prepared training set.
pub fn train_on(
    config: &TrainConfig,
    problem: &PdeProblem,
    set: &TrainSet,
    model: MlpModel,
) -> Result<(MlpModel, TrainingLog)> {
    config.validate()?;
    if set.interior.is_empty() {
        return Err(Error::config("empty interior training set"));
    }
    let mut set = set.clone();
    if set.subset_idx.is_empty() {
        set.subset_idx = sampling::pick_subset(set.interior.len(), SUBSET_FRACTION, config.seed);
        if set.subset_idx.is_empty() {
            set.subset_idx = vec![0];
        }
    }
    let run = Run {
        config,
        problem,
        optimizer: Optimizer::new(config.optimizer, &model, config.lr),
        model,
        tape: JetTape::new(),
        log: TrainingLog::default(),
        start: Instant::now(),
    };
    let run = run.phase(&set, 0, config.iterations)?;
    Ok((run.model, run.log))
}

/// Mean squared residual over `interior` plus `λ ·` mean squared boundary
/// mismatch: the unweighted training objective on a full set.
pub fn full_training_loss(
    model: &MlpModel,
    problem: &PdeProblem,
    set: &TrainSet,
    lambda: f64,
) -> Result<f64> {
    let mut phys = 0.0;
    for x in set.interior.iter() {
        let r = problem.residual(model, x)?;
        phys += r * r;
    }
    phys /= set.interior.len().max(1) as f64;
    let mut bc = 0.0;
    for x in set.boundary.iter() {
        let b = model.forward(x)? - problem.boundary_value(x);
        bc += b * b;
    }
    bc /= set.boundary.len().max(1) as f64;
    Ok(phys + lambda * bc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    LossDistribution,
    DenseLayerSampling,
    RegionRejection,
}

impl std::str::FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loss_distribution" => Ok(Experiment::LossDistribution),
            "dense_layer_sampling" => Ok(Experiment::DenseLayerSampling),
            "region_rejection" => Ok(Experiment::RegionRejection),
            other => Err(Error::UnknownExperiment(other.to_string())),
        }
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Experiment::LossDistribution => "loss_distribution",
            Experiment::DenseLayerSampling => "dense_layer_sampling",
            Experiment::RegionRejection => "region_rejection",
        })
    }
}

/// Left end of the layer region used by the 1D diagnostics.
pub const LAYER_REGION: f64 = 0.1;
/// Layer-region sample counts compared by the dense-sampling experiment.
pub const DENSE_LAYER_COUNTS: [usize; 3] = [2500, 12_500, 25_000];
/// Left ends of the restricted training intervals.
pub const REJECTION_CUTS: [f64; 2] = [0.05, 0.1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRun {
    /// Left end of the training interval; `0` for the full domain.
    pub cut: f64,
    /// Unweighted training objective on the run's own training set.
    pub final_train_loss: f64,
    /// Mean squared residual on `(0.1, 1)`.
    pub loss_outside_layer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub experiment: Experiment,
    pub files: Vec<PathBuf>,
    /// `(x, r²)` per training point, for `loss_distribution`.
    pub point_losses: Vec<(f64, f64)>,
    /// One entry per run, for `region_rejection`.
    pub region_runs: Vec<RegionRun>,
}

/// Runs one of the 1D sampling experiments with curriculum weighting off and
/// writes its CSVs to `out_dir`.
pub fn run_diagnostics(
    config: &TrainConfig,
    experiment: Experiment,
    out_dir: &Path,
) -> Result<DiagnosticsReport> {
    let mut config = config.clone();
    config.curriculum = false;
    config.densify = false;
    config.validate()?;
    let problem = config.build_problem()?;
    if problem.dim() != 1 {
        return Err(Error::config(format!(
            "{experiment} needs a 1D problem, got {}",
            problem.id()
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut report = DiagnosticsReport {
        experiment,
        files: Vec::new(),
        point_losses: Vec::new(),
        region_runs: Vec::new(),
    };
    let fresh = |c: &TrainConfig| init_xavier(1, c.depth, c.width, c.init, c.seed);
    match experiment {
        Experiment::LossDistribution => {
            let (model, _) = train(&config)?;
            let set = sampling::sample_uniform(&problem, config.n_interior, config.n_boundary, config.seed);
            let path = out_dir.join("loss_distribution.csv");
            let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
            writeln!(out, "x,loss")?;
            for x in set.interior.iter() {
                let r = problem.residual(&model, x)?;
                writeln!(out, "{:e},{:e}", x[0], r * r)?;
                report.point_losses.push((x[0], r * r));
            }
            out.flush()?;
            report.files.push(path);
        }
        Experiment::DenseLayerSampling => {
            let mut variants = vec![("uniform".to_string(), None)];
            for n in DENSE_LAYER_COUNTS {
                variants.push((format!("layer{n}"), Some(n)));
            }
            for (name, layer_n) in variants {
                let set = match layer_n {
                    None => sampling::sample_uniform(&problem, config.n_interior, config.n_boundary, config.seed),
                    Some(n) => split_interval_set(&problem, &config, LAYER_REGION, n),
                };
                let (model, _) = train_on(&config, &problem, &set, fresh(&config)?)?;
                let path = out_dir.join(format!("dense_sampling_{name}.csv"));
                let grid = crate::metrics::prediction_grid(&model, &problem, 1001)?;
                grid.write_csv(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
                report.files.push(path);
            }
        }
        Experiment::RegionRejection => {
            let mut eval_rng = crate::seeding::rng(config.seed, crate::seeding::Stream::Probe);
            let outside = sampling::sample_interval(LAYER_REGION, 1.0, 1000, &mut eval_rng);
            let mut cuts = vec![0.0];
            cuts.extend(REJECTION_CUTS);
            for cut in cuts {
                let mut set = sampling::sample_uniform(&problem, config.n_interior, config.n_boundary, config.seed);
                if cut > 0.0 {
                    let mut rng = crate::seeding::rng(config.seed, crate::seeding::Stream::Interior);
                    set.interior = sampling::sample_interval(cut, 1.0, config.n_interior, &mut rng);
                }
                let (model, _) = train_on(&config, &problem, &set, fresh(&config)?)?;
                let final_train_loss = full_training_loss(&model, &problem, &set, config.lambda)?;
                let mut l = 0.0;
                for x in outside.iter() {
                    let r = problem.residual(&model, x)?;
                    l += r * r;
                }
                report.region_runs.push(RegionRun {
                    cut,
                    final_train_loss,
                    loss_outside_layer: l / outside.len() as f64,
                });
            }
            let path = out_dir.join("region_rejection.csv");
            let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
            writeln!(out, "cut,final_train_loss,loss_outside_layer")?;
            for r in &report.region_runs {
                writeln!(out, "{},{:e},{:e}", r.cut, r.final_train_loss, r.loss_outside_layer)?;
            }
            out.flush()?;
            report.files.push(path);
        }
    }
    Ok(report)
}

/// `n_interior` points on `(cut, 1)` plus `n_layer` points on `(0, cut)`.
fn split_interval_set(problem: &PdeProblem, config: &TrainConfig, cut: f64, n_layer: usize) -> TrainSet {
    let mut set = sampling::sample_uniform(problem, 0, config.n_boundary, config.seed);
    let mut rng = crate::seeding::rng(config.seed, crate::seeding::Stream::Interior);
    let outer = sampling::sample_interval(cut, 1.0, config.n_interior, &mut rng);
    let inner = sampling::sample_interval(0.0, cut, n_layer, &mut rng);
    for x in outer.iter().chain(inner.iter()) {
        set.interior.push(x);
    }
    set
}
