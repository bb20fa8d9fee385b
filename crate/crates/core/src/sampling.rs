//! Training-set construction: uniform collocation and boundary samples, the
//! fixed threshold subset, densification around high-residual points, and
//! minibatch order.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Surrogate;
use crate::error::Result;
use crate::problems::PdeProblem;
use crate::seeding::{self, Stream};

/// A flat list of points of one dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
        }
    }

    pub fn with_capacity(dim: usize, n: usize) -> Self {
        Self {
            dim,
            data: Vec::with_capacity(dim * n),
        }
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0 && data.len() % dim == 0, "flat data must hold whole points");
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.dim);
        self.data.extend_from_slice(x);
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Writes one point per row with a `x1,x2,...` header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.dim).map(|k| format!("x{k}")).collect();
        writeln!(out, "{}", header.join(","))?;
        for p in self.iter() {
            let row: Vec<String> = p.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Collocation points, boundary points and the threshold subset.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSet {
    pub interior: Points,
    pub boundary: Points,
    /// Indices into `interior` forming the fixed threshold subset.
    pub subset_idx: Vec<usize>,
}

impl TrainSet {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let dim = self.interior.dim();
        let header: Vec<String> = (1..=dim).map(|k| format!("x{k}")).collect();
        writeln!(out, "kind,{}", header.join(","))?;
        let mut in_subset = vec![false; self.interior.len()];
        for &i in &self.subset_idx {
            in_subset[i] = true;
        }
        for (i, p) in self.interior.iter().enumerate() {
            let kind = if in_subset[i] { "subset" } else { "interior" };
            let row: Vec<String> = p.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{kind},{}", row.join(","))?;
        }
        for p in self.boundary.iter() {
            let row: Vec<String> = p.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "boundary,{}", row.join(","))?;
        }
        Ok(())
    }
}

/// I.i.d. uniform interior points and boundary points distributed by arc
/// length (area in 3D). In 1D the boundary is exactly `{0, 1}`, repeated
/// cyclically if more than two points are requested.
pub fn sample_uniform(
    problem: &PdeProblem,
    n_interior: usize,
    n_boundary: usize,
    seed: u64,
) -> TrainSet {
    let dim = problem.dim();
    let mut rng = seeding::rng(seed, Stream::Interior);
    let interior = uniform_interior(problem, n_interior, &mut rng);

    let mut boundary = Points::with_capacity(dim, n_boundary);
    if dim == 1 {
        for i in 0..n_boundary {
            boundary.push(&[if i % 2 == 0 { 0.0 } else { 1.0 }]);
        }
    } else {
        let mut rng = seeding::rng(seed, Stream::Boundary);
        let mut x = vec![0.0; dim];
        for _ in 0..n_boundary {
            problem.sample_boundary_point(&mut rng, &mut x);
            boundary.push(&x);
        }
    }
    TrainSet {
        interior,
        boundary,
        subset_idx: Vec::new(),
    }
}

fn uniform_interior<R: Rng + ?Sized>(problem: &PdeProblem, n: usize, rng: &mut R) -> Points {
    let dim = problem.dim();
    let mut pts = Points::with_capacity(dim, n);
    let mut x = vec![0.0; dim];
    while pts.len() < n {
        problem.domain().sample_interior(rng, &mut x);
        if problem.contains(&x) {
            pts.push(&x);
        }
    }
    pts
}

/// Uniform points on the sub-interval `(lo, hi)` of a 1D problem.
pub fn sample_interval(lo: f64, hi: f64, n: usize, rng: &mut ChaCha8Rng) -> Points {
    let mut pts = Points::with_capacity(1, n);
    while pts.len() < n {
        let x = lo + (hi - lo) * rng.random::<f64>();
        if x > lo && x < hi {
            pts.push(&[x]);
        }
    }
    pts
}

/// Uniform random subset of `floor(n · fraction)` distinct indices.
pub fn pick_subset(n: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let k = ((n as f64) * fraction.clamp(0.0, 1.0)).floor() as usize;
    let mut rng = seeding::rng(seed, Stream::Subset);
    let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Attempts at drawing a perturbed point inside the domain before giving up
/// on that parent.
const PERTURB_ATTEMPTS: usize = 32;

/// Grows `train_set.interior` to `target_n` points by adding Gaussian
/// perturbations (σ = diameter / 100) of points whose squared residual exceeds
/// `beta`. Newly added points are themselves candidates in later rounds. When a
/// round finds no candidate the remainder is filled uniformly.
pub fn densify<S: Surrogate + ?Sized>(
    mut train_set: TrainSet,
    problem: &PdeProblem,
    field: &S,
    beta: f64,
    target_n: usize,
    seed: u64,
) -> Result<TrainSet> {
    let dim = problem.dim();
    let sigma = problem.domain().diameter() / 100.0;
    let mut rng = seeding::rng(seed, Stream::Densify);
    let mut scored = 0;
    let mut candidate = vec![0.0; dim];
    while train_set.interior.len() < target_n {
        let round_end = train_set.interior.len();
        let mut added = 0;
        for i in scored..round_end {
            if train_set.interior.len() >= target_n {
                break;
            }
            let x = train_set.interior.get(i).to_vec();
            let r = problem.residual(field, &x)?;
            if !(r * r > beta) {
                continue;
            }
            for _ in 0..PERTURB_ATTEMPTS {
                for (c, xi) in candidate.iter_mut().zip(&x) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *c = xi + sigma * z;
                }
                if problem.contains(&candidate) {
                    train_set.interior.push(&candidate);
                    added += 1;
                    break;
                }
            }
        }
        scored = round_end;
        if added == 0 {
            let fill = uniform_interior(problem, target_n - train_set.interior.len(), &mut rng);
            for p in fill.iter() {
                train_set.interior.push(p);
            }
        }
    }
    Ok(train_set)
}

/// Epoch-wise shuffled minibatches over `n` indices.
#[derive(Debug, Clone)]
pub struct Batcher {
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        let mut rng = seeding::rng(seed, Stream::Batches);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self {
            order,
            cursor: 0,
            batch_size: batch_size.clamp(1, n.max(1)),
            rng,
        }
    }

    /// Next `batch_size` indices; a fresh permutation starts when the current
    /// one runs out.
    pub fn next_batch(&mut self) -> &[usize] {
        if self.cursor + self.batch_size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let start = self.cursor;
        self.cursor += self.batch_size;
        &self.order[start..self.cursor]
    }
}
