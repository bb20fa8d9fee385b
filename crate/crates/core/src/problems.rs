//! The benchmark convection-diffusion-reaction problems
//!
//! ```text
//! -ε Δu + b(x)·∇u + c(x) u = f(x)   in Ω
//!                         u = g(x)   on ∂Ω
//! ```
//!
//! with Dirichlet data everywhere. Manufactured source terms are closed forms
//! in which every `ε · ε^{-k}` product has been cancelled by hand, and every
//! exponential is evaluated as `e^{-z}` with `z ≥ 0`, so evaluation stays finite
//! down to `ε = 1e-9`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{PointDerivs, Real, Surrogate, MAX_DIM};
use crate::error::{Error, Result};

/// Tolerance for "this point lies on the boundary".
pub const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProblemId {
    /// 1D convection-diffusion, boundary layer at `x = 0`.
    #[serde(rename = "p1d")]
    P1d,
    /// 2D convection-diffusion-reaction with three boundary layers.
    #[serde(rename = "p2d_bl")]
    P2dBl,
    /// 2D convection-diffusion with interior layers from discontinuous data.
    #[serde(rename = "p2d_il")]
    P2dIl,
    /// Convection-diffusion-reaction on the L-shaped domain.
    #[serde(rename = "p2d_l")]
    P2dL,
    /// Rotating flow with data prescribed on an internal slit.
    #[serde(rename = "p2d_rot")]
    P2dRot,
    /// 3D convection-diffusion, three exponential layers.
    #[serde(rename = "p3d")]
    P3d,
    /// User-supplied coefficients (tests and experiments).
    #[serde(rename = "synthetic")]
    Synthetic,
}

impl ProblemId {
    pub const BENCHMARKS: [ProblemId; 6] = [
        ProblemId::P1d,
        ProblemId::P2dBl,
        ProblemId::P2dIl,
        ProblemId::P2dL,
        ProblemId::P2dRot,
        ProblemId::P3d,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemId::P1d => "p1d",
            ProblemId::P2dBl => "p2d_bl",
            ProblemId::P2dIl => "p2d_il",
            ProblemId::P2dL => "p2d_l",
            ProblemId::P2dRot => "p2d_rot",
            ProblemId::P3d => "p3d",
            ProblemId::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let id = match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "p1d" => ProblemId::P1d,
            "p2d_bl" => ProblemId::P2dBl,
            "p2d_il" => ProblemId::P2dIl,
            "p2d_l" => ProblemId::P2dL,
            "p2d_rot" => ProblemId::P2dRot,
            "p3d" => ProblemId::P3d,
            other => return Err(Error::config(format!("unknown problem `{other}`"))),
        };
        Ok(id)
    }
}

/// Computational domains. Membership means strict interior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainShape {
    /// `(0, 1)`
    Interval,
    /// `(0, 1)²`
    UnitSquare,
    /// `(-1, 1)² \ (-1, 0]²`
    LShape,
    /// `(0, 1)³`
    UnitCube,
}

impl DomainShape {
    pub fn dim(self) -> usize {
        match self {
            DomainShape::Interval => 1,
            DomainShape::UnitSquare | DomainShape::LShape => 2,
            DomainShape::UnitCube => 3,
        }
    }

    /// Strict interior membership.
    pub fn contains(self, x: &[f64]) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match self {
            DomainShape::Interval | DomainShape::UnitSquare | DomainShape::UnitCube => {
                x.iter().all(|&c| c > 0.0 && c < 1.0)
            }
            DomainShape::LShape => {
                x.iter().all(|&c| c > -1.0 && c < 1.0) && !(x[0] <= 0.0 && x[1] <= 0.0)
            }
        }
    }

    /// Whether `x` lies on `∂Ω` within `tol`.
    pub fn on_boundary(self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        let near = |a: f64, b: f64| (a - b).abs() <= tol;
        let within = |a: f64, lo: f64, hi: f64| a >= lo - tol && a <= hi + tol;
        match self {
            DomainShape::Interval | DomainShape::UnitSquare | DomainShape::UnitCube => {
                x.iter().all(|&c| within(c, 0.0, 1.0))
                    && x.iter().any(|&c| near(c, 0.0) || near(c, 1.0))
            }
            DomainShape::LShape => {
                let (a, b) = (x[0], x[1]);
                if !(within(a, -1.0, 1.0) && within(b, -1.0, 1.0)) {
                    return false;
                }
                let outer = near(a, 1.0)
                    || near(b, 1.0)
                    || (near(a, -1.0) && b >= -tol)
                    || (near(b, -1.0) && a >= -tol);
                let inner = (near(b, 0.0) && a <= tol) || (near(a, 0.0) && b <= tol);
                outer || inner
            }
        }
    }

    pub fn diameter(self) -> f64 {
        match self {
            DomainShape::Interval => 1.0,
            DomainShape::UnitSquare => 2f64.sqrt(),
            DomainShape::LShape => 2.0 * 2f64.sqrt(),
            DomainShape::UnitCube => 3f64.sqrt(),
        }
    }

    /// Axis-aligned bounding box as `(lower, upper)` per coordinate.
    pub fn bounding_box(self) -> Vec<(f64, f64)> {
        match self {
            DomainShape::LShape => vec![(-1.0, 1.0); 2],
            other => vec![(0.0, 1.0); other.dim()],
        }
    }

    pub fn measure(self) -> f64 {
        match self {
            DomainShape::LShape => 3.0,
            _ => 1.0,
        }
    }

    /// Uniform interior sample (rejection sampling for the L-shape).
    pub fn sample_interior<R: Rng + ?Sized>(self, rng: &mut R, out: &mut [f64]) {
        let bbox = self.bounding_box();
        loop {
            for (o, (lo, hi)) in out.iter_mut().zip(&bbox) {
                *o = lo + (hi - lo) * rng.random::<f64>();
            }
            if self.contains(out) {
                return;
            }
        }
    }

    /// Length (2D) or area (3D) of `∂Ω`; the interval boundary counts its two
    /// endpoints.
    pub fn boundary_measure(self) -> f64 {
        match self {
            DomainShape::Interval => 2.0,
            DomainShape::UnitSquare => 4.0,
            DomainShape::LShape => 8.0,
            DomainShape::UnitCube => 6.0,
        }
    }

    /// Boundary point at arc-length (2D) position `s ∈ [0, boundary_measure)`.
    /// For the cube, `s` selects the face and `t` the in-face coordinates.
    fn boundary_point(self, s: f64, t: [f64; 2], out: &mut [f64]) {
        match self {
            DomainShape::Interval => out[0] = if s < 1.0 { 0.0 } else { 1.0 },
            DomainShape::UnitSquare => {
                let (side, u) = (s.floor() as usize, s.fract());
                let p = match side {
                    0 => [u, 0.0],
                    1 => [1.0, u],
                    2 => [1.0 - u, 1.0],
                    _ => [0.0, 1.0 - u],
                };
                out.copy_from_slice(&p);
            }
            DomainShape::LShape => {
                // Counter-clockwise from (0,-1): six edges, lengths 1,2,2,1,1,1.
                let p = if s < 1.0 {
                    [s, -1.0]
                } else if s < 3.0 {
                    [1.0, -1.0 + (s - 1.0)]
                } else if s < 5.0 {
                    [1.0 - (s - 3.0), 1.0]
                } else if s < 6.0 {
                    [-1.0, 1.0 - (s - 5.0)]
                } else if s < 7.0 {
                    [-1.0 + (s - 6.0), 0.0]
                } else {
                    [0.0, -(s - 7.0)]
                };
                out.copy_from_slice(&p);
            }
            DomainShape::UnitCube => {
                let face = (s.floor() as usize).min(5);
                let axis = face / 2;
                let side = (face % 2) as f64;
                let mut free = t.iter();
                for (k, o) in out.iter_mut().enumerate() {
                    *o = if k == axis { side } else { *free.next().unwrap() };
                }
            }
        }
    }
}

/// Outer boundary treatment for the rotating-flow problem, whose data is only
/// prescribed on the slit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterBoundary {
    /// Homogeneous Dirichlet data on `∂(0,1)²`.
    #[default]
    Dirichlet,
    /// Only the slit carries data.
    Free,
}

impl FromStr for OuterBoundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dirichlet" => Ok(OuterBoundary::Dirichlet),
            "free" | "none" => Ok(OuterBoundary::Free),
            other => Err(Error::config(format!("unknown outer boundary `{other}`"))),
        }
    }
}

/// Coefficients of a hand-specified problem on one of the standard domains.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticPde {
    pub domain: DomainShape,
    pub convection: fn(&[f64]) -> [f64; MAX_DIM],
    pub reaction: fn(&[f64]) -> f64,
    pub source: fn(&[f64]) -> f64,
    pub boundary: fn(&[f64]) -> f64,
}

/// One benchmark equation at a fixed `ε`.
#[derive(Debug, Clone)]
pub struct PdeProblem {
    id: ProblemId,
    epsilon: f64,
    outer: OuterBoundary,
    synthetic: Option<Arc<SyntheticPde>>,
}

/// Slit of the rotating-flow problem: `{1/2} x [0, 1/2]`.
const SLIT_X: f64 = 0.5;
const SLIT_TOP: f64 = 0.5;

impl PdeProblem {
    pub fn new(id: ProblemId, epsilon: f64) -> Result<Self> {
        if id == ProblemId::Synthetic {
            return Err(Error::config("use PdeProblem::synthetic for custom problems"));
        }
        check_epsilon(epsilon)?;
        Ok(Self {
            id,
            epsilon,
            outer: OuterBoundary::default(),
            synthetic: None,
        })
    }

    pub fn synthetic(pde: SyntheticPde, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(Self {
            id: ProblemId::Synthetic,
            epsilon,
            outer: OuterBoundary::default(),
            synthetic: Some(Arc::new(pde)),
        })
    }

    pub fn with_outer_boundary(mut self, outer: OuterBoundary) -> Self {
        self.outer = outer;
        self
    }

    pub fn id(&self) -> ProblemId {
        self.id
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn outer_boundary(&self) -> OuterBoundary {
        self.outer
    }

    pub fn domain(&self) -> DomainShape {
        match self.id {
            ProblemId::P1d => DomainShape::Interval,
            ProblemId::P2dBl | ProblemId::P2dIl | ProblemId::P2dRot => DomainShape::UnitSquare,
            ProblemId::P2dL => DomainShape::LShape,
            ProblemId::P3d => DomainShape::UnitCube,
            ProblemId::Synthetic => self.synthetic.as_ref().unwrap().domain,
        }
    }

    pub fn dim(&self) -> usize {
        self.domain().dim()
    }

    /// True only for the rotating-flow problem, written as `∇·(b u)`.
    pub fn divergence_form(&self) -> bool {
        self.id == ProblemId::P2dRot
    }

    pub fn convection(&self, x: &[f64]) -> [f64; MAX_DIM] {
        match self.id {
            ProblemId::P1d => [x[0] - 2.0, 0.0, 0.0],
            ProblemId::P2dBl => [3.0 - x[0] - x[1], 0.0, 0.0],
            ProblemId::P2dIl => [0.5, 3f64.sqrt() / 2.0, 0.0],
            ProblemId::P2dL => [
                -(1.0 + 0.5 * (2.0 * PI * x[0]).sin()),
                -(2.0 - (2.0 * PI * x[1]).cos()),
                0.0,
            ],
            ProblemId::P2dRot => [0.5 - x[1], x[0] - 0.5, 0.0],
            ProblemId::P3d => [1.0, 2.0, 1.0],
            ProblemId::Synthetic => (self.synthetic.as_ref().unwrap().convection)(x),
        }
    }

    /// `∇·b`, used only in divergence form.
    pub fn convection_divergence(&self, _x: &[f64]) -> f64 {
        match self.id {
            // ∂(1/2 - x2)/∂x1 + ∂(x1 - 1/2)/∂x2
            ProblemId::P2dRot => 0.0,
            _ => 0.0,
        }
    }

    pub fn reaction(&self, x: &[f64]) -> f64 {
        match self.id {
            ProblemId::P2dBl => 1.5,
            ProblemId::P2dL => 3.0 + (2.0 * PI * x[0] * x[1]).sin(),
            ProblemId::Synthetic => (self.synthetic.as_ref().unwrap().reaction)(x),
            _ => 0.0,
        }
    }

    /// Right-hand side `f(x)`: the literal field, or the manufactured closed
    /// form for problems with an exact solution.
    pub fn source(&self, x: &[f64]) -> f64 {
        match self.id {
            ProblemId::P2dIl | ProblemId::P2dRot => 0.0,
            ProblemId::P2dL => 1.0 - (x[0] + x[1]) / 2.0,
            ProblemId::P1d => p1d_source(x[0], self.epsilon),
            ProblemId::P2dBl => p2d_bl_source(x[0], x[1], self.epsilon),
            ProblemId::P3d => p3d_source(x, self.epsilon),
            ProblemId::Synthetic => (self.synthetic.as_ref().unwrap().source)(x),
        }
    }

    /// Manufactured `f = L u_exact`. Only defined for problems with an exact
    /// solution.
    pub fn source_term(&self, x: &[f64]) -> Result<f64> {
        if !self.has_exact_solution() {
            return Err(Error::NoExactSolution(self.id));
        }
        self.check_interior(x)?;
        Ok(self.source(x))
    }

    pub fn has_exact_solution(&self) -> bool {
        matches!(self.id, ProblemId::P1d | ProblemId::P2dBl | ProblemId::P3d)
    }

    /// Exact solution at `x`.
    pub fn exact_solution(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        self.exact_generic(x).ok_or(Error::NoExactSolution(self.id))
    }

    /// Exact solution over any [`Real`] scalar; `None` when unknown.
    pub fn exact_generic<T: Real>(&self, x: &[T]) -> Option<T> {
        let eps = self.epsilon;
        let one = T::from_f64(1.0);
        // 1 - e^{-z} for z >= 0
        let one_minus_exp = |z: T| -(-z).exp_m1();
        match self.id {
            ProblemId::P1d => {
                let x = x[0];
                Some(x.scale(PI / 2.0).cos() * one_minus_exp(x.scale(2.0 / eps)))
            }
            ProblemId::P2dBl => {
                let (x1, x2) = (x[0], x[1]);
                let s = eps.sqrt();
                let e1 = (-1.0 / eps).exp();
                let d = -(-1.0 / eps).exp_m1();
                let ds = -(-1.0 / s).exp_m1();
                let a = x1.scale(PI / 2.0).sin()
                    - ((x1 - one).scale(1.0 / eps).exp() - T::from_f64(e1)).scale(1.0 / d);
                let b = (one_minus_exp(x2.scale(1.0 / s)) * one_minus_exp((one - x2).scale(1.0 / s)))
                    .scale(1.0 / ds);
                Some(a * b)
            }
            ProblemId::P3d => {
                let (x1, x2, x3) = (x[0], x[1], x[2]);
                let f1 = x1.sin() * one_minus_exp((one - x1).scale(1.0 / eps));
                let f2 = (one - x2) * (one - x2) * one_minus_exp(x2.scale(1.0 / eps));
                let f3 = (one - x3) * one_minus_exp(x3.scale(1.0 / eps));
                Some(f1 * f2 * f3)
            }
            _ => None,
        }
    }

    /// Distance to the nearest layer of a problem with an exact solution.
    pub fn layer_distance(&self, x: &[f64]) -> Option<f64> {
        match self.id {
            ProblemId::P1d => Some(x[0]),
            ProblemId::P2dBl => Some((1.0 - x[0]).min(x[1]).min(1.0 - x[1])),
            ProblemId::P3d => Some((1.0 - x[0]).min(x[1]).min(x[2])),
            _ => None,
        }
    }

    /// Dirichlet data `g(x)` (slit data included for the rotating flow).
    pub fn boundary_value(&self, x: &[f64]) -> f64 {
        match self.id {
            ProblemId::P2dIl => {
                if x[1].abs() <= BOUNDARY_TOL || (x[0].abs() <= BOUNDARY_TOL && x[1] <= 0.2) {
                    1.0
                } else {
                    0.0
                }
            }
            ProblemId::P2dRot if self.on_slit(x) => {
                let s = (2.0 * PI * x[1]).sin();
                s * s
            }
            ProblemId::Synthetic => (self.synthetic.as_ref().unwrap().boundary)(x),
            _ => 0.0,
        }
    }

    /// Whether `x` lies on the rotating-flow slit.
    pub fn on_slit(&self, x: &[f64]) -> bool {
        self.id == ProblemId::P2dRot
            && (x[0] - SLIT_X).abs() <= BOUNDARY_TOL
            && x[1] >= -BOUNDARY_TOL
            && x[1] <= SLIT_TOP + BOUNDARY_TOL
    }

    /// Whether `x` carries boundary data.
    pub fn on_data_boundary(&self, x: &[f64]) -> bool {
        if self.on_slit(x) {
            return true;
        }
        if self.id == ProblemId::P2dRot && self.outer == OuterBoundary::Free {
            return false;
        }
        self.domain().on_boundary(x, BOUNDARY_TOL)
    }

    /// Interior membership; the rotating-flow slit is excluded.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.domain().contains(x) && !self.on_slit(x)
    }

    /// Range `[lo, hi]` the true solution is known to lie in, used for
    /// overshoot/undershoot reports. For the L-shape the comparison principle
    /// gives `0 ≤ u ≤ max f / min c = 1.5 / 2`.
    pub fn solution_bounds(&self) -> (f64, f64) {
        match self.id {
            ProblemId::P2dL => (0.0, 0.75),
            _ => (0.0, 1.0),
        }
    }

    /// Samples one point of the data boundary uniformly by arc length / area.
    pub fn sample_boundary_point<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let domain = self.domain();
        if self.id == ProblemId::P2dRot {
            let outer = if self.outer == OuterBoundary::Dirichlet {
                domain.boundary_measure()
            } else {
                0.0
            };
            let total = outer + SLIT_TOP;
            let s = rng.random::<f64>() * total;
            if s >= outer {
                out[0] = SLIT_X;
                out[1] = s - outer;
                return;
            }
            domain.boundary_point(s, [0.0; 2], out);
            return;
        }
        let s = rng.random::<f64>() * domain.boundary_measure();
        let t = [rng.random::<f64>(), rng.random::<f64>()];
        domain.boundary_point(s, t, out);
    }

    /// Physical residual `r = -εΔu + b·∇u + c u - f` from precomputed
    /// derivatives (no domain check).
    #[inline]
    pub fn residual_from_derivs(&self, x: &[f64], d: &PointDerivs) -> f64 {
        let b = self.convection(x);
        let mut c = self.reaction(x);
        if self.divergence_form() {
            c += self.convection_divergence(x);
        }
        let mut adv = 0.0;
        for k in 0..d.dim {
            adv += b[k] * d.grad[k];
        }
        -self.epsilon * d.laplacian() + adv + c * d.value - self.source(x)
    }

    /// `∂r/∂(u, ∇u, diag ∇²u)` at `x`; the residual is affine in these.
    #[inline]
    pub fn residual_linearization(&self, x: &[f64]) -> PointDerivs {
        let b = self.convection(x);
        let dim = self.dim();
        let mut lin = PointDerivs::zero(dim);
        lin.value = self.reaction(x)
            + if self.divergence_form() {
                self.convection_divergence(x)
            } else {
                0.0
            };
        for k in 0..dim {
            lin.grad[k] = b[k];
            lin.second[k] = -self.epsilon;
        }
        lin
    }

    /// Physical residual of `field` at an interior point.
    pub fn residual<S: Surrogate + ?Sized>(&self, field: &S, x: &[f64]) -> Result<f64> {
        self.check_interior(x)?;
        Ok(self.residual_from_derivs(x, &field.derivs(x)))
    }

    /// The residual written literally in divergence form, `∇·(b u) = b·∇u + (∇·b) u`
    /// expanded with the analytic divergence regardless of the problem's form.
    pub fn residual_divergence_form<S: Surrogate + ?Sized>(
        &self,
        field: &S,
        x: &[f64],
    ) -> Result<f64> {
        self.check_interior(x)?;
        let d = field.derivs(x);
        let b = self.convection(x);
        let adv: f64 = (0..d.dim).map(|k| b[k] * d.grad[k]).sum();
        let c = self.reaction(x) + self.convection_divergence(x);
        Ok(-self.epsilon * d.laplacian() + adv + c * d.value - self.source(x))
    }

    /// `u(x_b) - g(x_b)` on the data boundary.
    pub fn boundary_residual<S: Surrogate + ?Sized>(&self, field: &S, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        if !self.on_data_boundary(x) {
            return Err(Error::NotOnBoundary {
                problem: self.id,
                point: x.to_vec(),
            });
        }
        Ok(field.value(x) - self.boundary_value(x))
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn check_interior(&self, x: &[f64]) -> Result<()> {
        self.check_dim(x)?;
        if !self.contains(x) {
            return Err(Error::OutsideDomain {
                problem: self.id,
                point: x.to_vec(),
            });
        }
        Ok(())
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::config(format!("epsilon must lie in (0, 1], got {epsilon}")));
    }
    Ok(())
}

/// `f` for `u = cos(πx/2)(1 - e^{-2x/ε})` under `-εu'' + (x-2)u'`.
fn p1d_source(x: f64, eps: f64) -> f64 {
    let (s, c) = (PI * x / 2.0).sin_cos();
    let z = 2.0 * x / eps;
    let e = (-z).exp();
    let one_minus_e = -(-z).exp_m1();
    // (1-E)(-εC'' + (x-2)C') - 4C'E + (2x/ε) E C, with C' = -(π/2) S, C'' = -(π²/4) C
    one_minus_e * (eps * PI * PI / 4.0 * c - (x - 2.0) * PI / 2.0 * s) + 2.0 * PI * s * e + z * e * c
}

fn p2d_bl_source(x1: f64, x2: f64, eps: f64) -> f64 {
    let (s1, c1) = (PI * x1 / 2.0).sin_cos();
    let d = -(-1.0 / eps).exp_m1();
    let e1 = (-1.0 / eps).exp();
    let p_layer = (-(1.0 - x1) / eps).exp();
    let a = s1 - (p_layer - e1) / d;
    // e^{-(1-x1)/ε} / ε, bounded by 1/ε
    let p_over_eps = p_layer / eps;

    let s = eps.sqrt();
    let ds = -(-1.0 / s).exp_m1();
    let p = (-x2 / s).exp();
    let q = (-(1.0 - x2) / s).exp();
    let b = (-(-x2 / s).exp_m1()) * (-(-(1.0 - x2) / s).exp_m1()) / ds;

    // -εA'' + (3 - x1 - x2) A' with the P/ε terms collected.
    let a_part = eps * PI * PI / 4.0 * s1
        + (3.0 - x1 - x2) * PI / 2.0 * c1
        + (x1 + x2 - 2.0) * p_over_eps / d;
    // -εB'' = (p + q) / Ds
    a_part * b + a * (p + q) / ds + 1.5 * a * b
}

fn p3d_source(x: &[f64], eps: f64) -> f64 {
    let (x1, x2, x3) = (x[0], x[1], x[2]);
    let (s1, c1) = x1.sin_cos();
    let pe = (-(1.0 - x1) / eps).exp();
    let om_p = -(-(1.0 - x1) / eps).exp_m1();
    let qe = (-x2 / eps).exp();
    let om_q = -(-x2 / eps).exp_m1();
    let re = (-x3 / eps).exp();
    let om_r = -(-x3 / eps).exp_m1();
    let y2 = 1.0 - x2;
    let y3 = 1.0 - x3;

    let f1 = s1 * om_p;
    let f2 = y2 * y2 * om_q;
    let f3 = y3 * om_r;
    // Per-factor 1D operators -εF'' + b_k F'.
    let t1 = eps * s1 * om_p + 2.0 * c1 * pe + c1 * om_p;
    let t2 = -2.0 * eps * om_q + 4.0 * y2 * qe - 4.0 * y2 * om_q + 3.0 * y2 * y2 * (qe / eps);
    let t3 = 2.0 * re - om_r + 2.0 * y3 * (re / eps);
    t1 * f2 * f3 + f1 * t2 * f3 + f1 * f2 * t3
}

/// The exact solution of a problem as a [`Surrogate`].
pub struct ExactSolution<'a>(pub &'a PdeProblem);

impl Surrogate for ExactSolution<'_> {
    fn input_dim(&self) -> usize {
        self.0.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.0.exact_generic(x).expect("problem has an exact solution")
    }

    fn derivs(&self, x: &[f64]) -> PointDerivs {
        let jets: Vec<_> = (0..x.len())
            .map(|k| {
                self.0
                    .exact_generic(&crate::autodiff::Jet2::seed(x, k))
                    .expect("problem has an exact solution")
            })
            .collect();
        PointDerivs::from_jets(&jets)
    }
}
