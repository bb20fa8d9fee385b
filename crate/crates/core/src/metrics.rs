//! Evaluation against exact solutions, overshoot checks and prediction grids.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Surrogate;
use crate::error::{Error, Result};
use crate::problems::{DomainShape, PdeProblem};
use crate::sampling::Points;
use crate::seeding::{self, Stream};

/// Test-set size: 1000 points in 1D, 5000 otherwise.
pub fn default_n_test(dim: usize) -> usize {
    if dim == 1 {
        1000
    } else {
        5000
    }
}

/// Uniform interior test points, fixed per seed.
pub fn test_points(problem: &PdeProblem, n: usize, seed: u64) -> Points {
    let dim = problem.dim();
    let mut rng = seeding::rng(seed, Stream::TestPoints);
    let mut pts = Points::with_capacity(dim, n);
    let mut x = vec![0.0; dim];
    while pts.len() < n {
        problem.domain().sample_interior(&mut rng, &mut x);
        if problem.contains(&x) {
            pts.push(&x);
        }
    }
    pts
}

/// `‖u_θ − u‖₂ / ‖u‖₂` over the given points.
pub fn nrmse_at<S: Surrogate + ?Sized>(field: &S, problem: &PdeProblem, points: &Points) -> Result<f64> {
    if !problem.has_exact_solution() {
        return Err(Error::NoExactSolution(problem.id()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for x in points.iter() {
        let u = problem.exact_solution(x)?;
        let e = field.value(x) - u;
        num += e * e;
        den += u * u;
    }
    if den == 0.0 {
        return Err(Error::UndefinedMetric(
            "exact solution vanishes on every test point".into(),
        ));
    }
    Ok(num.sqrt() / den.sqrt())
}

pub fn nrmse<S: Surrogate + ?Sized>(field: &S, problem: &PdeProblem, n_test: usize, seed: u64) -> Result<f64> {
    nrmse_at(field, problem, &test_points(problem, n_test, seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nrmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub max_abs_error: Option<f64>,
    /// `max(0, max u_θ − upper bound)`.
    pub overshoot: f64,
    /// `max(0, lower bound − min u_θ)`.
    pub undershoot: f64,
    pub n_test: usize,
    pub seed: u64,
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Overshoot and undershoot of `field` relative to the solution range on
/// `n_test` uniform test points.
pub fn overshoot_report<S: Surrogate + ?Sized>(
    field: &S,
    problem: &PdeProblem,
    n_test: usize,
    seed: u64,
) -> EvalReport {
    let points = test_points(problem, n_test, seed);
    let (lo, hi) = problem.solution_bounds();
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for x in points.iter() {
        let u = field.value(x);
        min = min.min(u);
        max = max.max(u);
    }
    EvalReport {
        nrmse: None,
        max_abs_error: None,
        overshoot: (max - hi).max(0.0),
        undershoot: (lo - min).max(0.0),
        n_test,
        seed,
    }
}

/// Full report: error metrics when an exact solution exists, range checks
/// always.
pub fn evaluate<S: Surrogate + ?Sized>(field: &S, problem: &PdeProblem, seed: u64) -> Result<EvalReport> {
    let n_test = default_n_test(problem.dim());
    let mut report = overshoot_report(field, problem, n_test, seed);
    if problem.has_exact_solution() {
        let points = test_points(problem, n_test, seed);
        report.nrmse = Some(nrmse_at(field, problem, &points)?);
        let mut worst: f64 = 0.0;
        for x in points.iter() {
            worst = worst.max((field.value(x) - problem.exact_solution(x)?).abs());
        }
        report.max_abs_error = Some(worst);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrid {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl PredictionGrid {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", self.header.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        out.flush()
    }

    /// Column index by name.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// Regular `resolution^d` grid over the closure of the domain's bounding
/// box, dropping points outside `Ω̄` (the removed quadrant of the L-shape).
pub fn prediction_grid<S: Surrogate + ?Sized>(
    field: &S,
    problem: &PdeProblem,
    resolution: usize,
) -> Result<PredictionGrid> {
    if resolution < 2 {
        return Err(Error::config("grid resolution must be at least 2"));
    }
    let dim = problem.dim();
    let bbox = problem.domain().bounding_box();
    let exact = problem.has_exact_solution();
    let mut header: Vec<String> = (1..=dim).map(|k| format!("x{k}")).collect();
    header.push("u_pred".into());
    if exact {
        header.push("u_exact".into());
        header.push("abs_err".into());
    }
    let total = resolution.pow(dim as u32);
    let mut rows = Vec::new();
    let mut x = vec![0.0; dim];
    for flat in 0..total {
        let mut rem = flat;
        for k in (0..dim).rev() {
            let i = rem % resolution;
            rem /= resolution;
            let (lo, hi) = bbox[k];
            x[k] = lo + (hi - lo) * i as f64 / (resolution - 1) as f64;
        }
        if problem.domain() == DomainShape::LShape && x[0] < 0.0 && x[1] < 0.0 {
            continue;
        }
        let mut row = x.clone();
        let u = field.value(&x);
        row.push(u);
        if exact {
            let ue = problem.exact_solution(&x)?;
            row.push(ue);
            row.push((u - ue).abs());
        }
        rows.push(row);
    }
    Ok(PredictionGrid { header, rows })
}
