//! Exact input derivatives (value, gradient, pure second derivatives) of the
//! network, and reverse accumulation of parameter gradients through them.
//!
//! Two evaluation paths exist:
//!
//! * [`Jet2`] is a truncated Taylor number carrying `(v, d/dx_k, d²/dx_k²)`
//!   along one seeded coordinate. It implements [`Real`], so any generic
//!   expression (the network, an exact solution) can be differentiated with it.
//! * [`JetTape`] runs the network once per point on all `1 + 2d` derivative
//!   channels at the layer level, records the activations and replays them
//!   backwards. This is the training hot path; its parameter gradient includes
//!   the dependence of `u_x` and `u_xx` on the weights.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::network::MlpModel;
use crate::problems::PdeProblem;

/// Largest supported input dimension.
pub const MAX_DIM: usize = 3;

/// Scalar arithmetic shared by `f64` and [`Jet2`].
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(c: f64) -> Self;
    fn value(self) -> f64;
    fn scale(self, c: f64) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    /// `e^x - 1`, accurate for small `x`.
    fn exp_m1(self) -> Self;
    fn tanh(self) -> Self;
}

impl Real for f64 {
    fn from_f64(c: f64) -> Self {
        c
    }
    fn value(self) -> f64 {
        self
    }
    fn scale(self, c: f64) -> Self {
        self * c
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn exp_m1(self) -> Self {
        f64::exp_m1(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
}

/// Value plus first and pure second derivative along one input coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet2 {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet2 {
    pub const fn new(v: f64, d1: f64, d2: f64) -> Self {
        Self { v, d1, d2 }
    }

    pub const fn constant(v: f64) -> Self {
        Self { v, d1: 0.0, d2: 0.0 }
    }

    /// The seeded coordinate itself: `(x, 1, 0)`.
    pub const fn variable(v: f64) -> Self {
        Self { v, d1: 1.0, d2: 0.0 }
    }

    /// Seeds a point for differentiation along coordinate `k`.
    pub fn seed(x: &[f64], k: usize) -> Vec<Jet2> {
        x.iter()
            .enumerate()
            .map(|(i, &xi)| if i == k { Jet2::variable(xi) } else { Jet2::constant(xi) })
            .collect()
    }

    /// `f(self)` given `f`, `f'` and `f''` at `self.v`.
    #[inline]
    pub fn chain(self, f: f64, df: f64, ddf: f64) -> Self {
        Self {
            v: f,
            d1: df * self.d1,
            d2: ddf * self.d1 * self.d1 + df * self.d2,
        }
    }

    pub fn recip(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(r, -r * r, 2.0 * r * r * r)
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite() && self.d1.is_finite() && self.d2.is_finite()
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    #[inline]
    fn add(self, o: Jet2) -> Jet2 {
        Jet2::new(self.v + o.v, self.d1 + o.d1, self.d2 + o.d2)
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    #[inline]
    fn sub(self, o: Jet2) -> Jet2 {
        Jet2::new(self.v - o.v, self.d1 - o.d1, self.d2 - o.d2)
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    #[inline]
    fn mul(self, o: Jet2) -> Jet2 {
        Jet2::new(
            self.v * o.v,
            self.d1 * o.v + self.v * o.d1,
            self.d2 * o.v + 2.0 * self.d1 * o.d1 + self.v * o.d2,
        )
    }
}

impl Div for Jet2 {
    type Output = Jet2;
    #[inline]
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Jet2) -> Jet2 {
        self * o.recip()
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    #[inline]
    fn neg(self) -> Jet2 {
        Jet2::new(-self.v, -self.d1, -self.d2)
    }
}

impl Real for Jet2 {
    fn from_f64(c: f64) -> Self {
        Jet2::constant(c)
    }
    fn value(self) -> f64 {
        self.v
    }
    #[inline]
    fn scale(self, c: f64) -> Self {
        Jet2::new(self.v * c, self.d1 * c, self.d2 * c)
    }
    fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }
    fn exp_m1(self) -> Self {
        let e = self.v.exp();
        self.chain(self.v.exp_m1(), e, e)
    }
    #[inline]
    fn tanh(self) -> Self {
        let t = self.v.tanh();
        let dt = 1.0 - t * t;
        self.chain(t, dt, -2.0 * t * dt)
    }
}

/// `(u, ∂u/∂x_k, ∂²u/∂x_k²)` of the network at `x` along coordinate `k`.
pub fn forward_jet(model: &MlpModel, x: &[f64], k: usize) -> Result<Jet2> {
    model.check_input(x)?;
    if k >= x.len() {
        return Err(Error::config(format!(
            "coordinate {k} out of range for a {}-dimensional input",
            x.len()
        )));
    }
    Ok(model.forward_generic(&Jet2::seed(x, k)))
}

/// Value, gradient and pure second derivatives of a scalar field at a point.
///
/// Also used as the cotangent carrier when seeding [`JetTape::backward`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PointDerivs {
    pub dim: usize,
    pub value: f64,
    pub grad: [f64; MAX_DIM],
    pub second: [f64; MAX_DIM],
}

impl PointDerivs {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn laplacian(&self) -> f64 {
        self.second[..self.dim].iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.grad[..self.dim].iter().all(|g| g.is_finite())
            && self.second[..self.dim].iter().all(|g| g.is_finite())
    }

    /// Assembles the per-coordinate jets of a field.
    pub fn from_jets(jets: &[Jet2]) -> Self {
        let mut out = Self::zero(jets.len());
        out.value = jets[0].v;
        for (k, j) in jets.iter().enumerate() {
            out.grad[k] = j.d1;
            out.second[k] = j.d2;
        }
        out
    }
}

/// Anything the PDE operators can be applied to: a network, an exact
/// solution, a hand-written test field.
pub trait Surrogate {
    fn input_dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn derivs(&self, x: &[f64]) -> PointDerivs;
}

impl Surrogate for MlpModel {
    fn input_dim(&self) -> usize {
        MlpModel::input_dim(self)
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.forward_generic(x)
    }

    fn derivs(&self, x: &[f64]) -> PointDerivs {
        let mut tape = JetTape::new();
        tape.record(self, x, DerivOrder::Second)
            .expect("caller checked the dimension");
        tape.outputs()[0]
    }
}

/// A field given as a generic closure, differentiated with [`Jet2`].
pub struct JetFn<F> {
    dim: usize,
    f: F,
}

impl<F> JetFn<F>
where
    F: Fn(&[Jet2]) -> Jet2,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> Surrogate for JetFn<F>
where
    F: Fn(&[Jet2]) -> Jet2,
{
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(&Jet2::seed(x, usize::MAX)).v
    }

    fn derivs(&self, x: &[f64]) -> PointDerivs {
        let jets: Vec<Jet2> = (0..self.dim).map(|k| (self.f)(&Jet2::seed(x, k))).collect();
        PointDerivs::from_jets(&jets)
    }
}

/// How many derivative channels to carry for a recorded point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivOrder {
    /// Value only (boundary samples).
    Value,
    /// Value, gradient and pure second derivatives (interior samples).
    Second,
}

/// Gradient of a scalar loss with respect to every model parameter, laid out
/// like [`MlpModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl ParamGradient {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            dims: model.dims().to_vec(),
            values: vec![0.0; model.num_params()],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_congruent(&self, model: &MlpModel) -> bool {
        self.dims == model.dims() && self.values.len() == model.num_params()
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, g| m.max(g.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|g| g.is_finite())
    }

    /// Weight gradient of layer `l` (row-major) and its bias gradient.
    pub fn layer(&self, model: &MlpModel, l: usize) -> (&[f64], &[f64]) {
        let start = model.layer_offset(l);
        let (i, o) = (model.dims()[l], model.dims()[l + 1]);
        let split = start + i * o;
        (&self.values[start..split], &self.values[split..split + o])
    }
}

/// Per-batch record of the layer-level jet propagation.
///
/// Channel layout for a `d`-dimensional input: `0` is the value, `1..=d` the
/// first derivatives, `d+1..=2d` the pure second derivatives. Each hidden layer
/// stores its pre-activations and activations for every channel.
#[derive(Debug, Default)]
pub struct JetTape {
    dim: usize,
    points: Vec<TapeEntry>,
    trace: Vec<f64>,
    xs: Vec<f64>,
    outputs: Vec<PointDerivs>,
}

#[derive(Debug, Clone, Copy)]
struct TapeEntry {
    channels: usize,
    trace_offset: usize,
}

impl JetTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.points.clear();
        self.trace.clear();
        self.xs.clear();
        self.outputs.clear();
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn outputs(&self) -> &[PointDerivs] {
        &self.outputs
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    /// Runs the forward pass for one point and appends it to the tape.
    pub fn record(&mut self, model: &MlpModel, x: &[f64], order: DerivOrder) -> Result<usize> {
        model.check_input(x)?;
        if self.points.is_empty() {
            self.dim = x.len();
        }
        let d = x.len();
        if d > MAX_DIM {
            return Err(Error::config(format!("input dimension {d} exceeds {MAX_DIM}")));
        }
        let ch = match order {
            DerivOrder::Value => 1,
            DerivOrder::Second => 1 + 2 * d,
        };
        let trace_offset = self.trace.len();
        let hidden: usize = model.dims()[1..model.dims().len() - 1].iter().sum();
        self.trace.resize(trace_offset + 2 * ch * hidden, 0.0);

        let mut input = input_channels(x, ch);
        let mut off = trace_offset;
        let last = model.num_layers() - 1;
        let mut out = [0.0; 1 + 2 * MAX_DIM];
        for l in 0..=last {
            let layer = model.layer(l);
            let (n_in, n_out) = (layer.inputs, layer.outputs);
            if l == last {
                for c in 0..ch {
                    let h = &input[c * n_in..(c + 1) * n_in];
                    let mut acc = if c == 0 { layer.biases[0] } else { 0.0 };
                    for (w, hi) in layer.weights.iter().zip(h) {
                        acc += hi * w;
                    }
                    out[c] = acc;
                }
                break;
            }
            let (pre, post) = self.trace[off..off + 2 * ch * n_out].split_at_mut(ch * n_out);
            for j in 0..n_out {
                let row = &layer.weights[j * n_in..(j + 1) * n_in];
                for c in 0..ch {
                    let h = &input[c * n_in..(c + 1) * n_in];
                    let mut acc = if c == 0 { layer.biases[j] } else { 0.0 };
                    for (w, hi) in row.iter().zip(h) {
                        acc += hi * w;
                    }
                    pre[c * n_out + j] = acc;
                }
            }
            tanh_forward(pre, post, n_out, ch, d);
            input.clear();
            input.extend_from_slice(post);
            off += 2 * ch * n_out;
        }

        let mut derivs = PointDerivs::zero(d);
        derivs.value = out[0];
        if ch > 1 {
            for k in 0..d {
                derivs.grad[k] = out[1 + k];
                derivs.second[k] = out[1 + d + k];
            }
        }
        self.points.push(TapeEntry {
            channels: ch,
            trace_offset,
        });
        self.xs.extend_from_slice(x);
        self.outputs.push(derivs);
        Ok(self.points.len() - 1)
    }

    /// Reverse pass: accumulates `Σ_i adjoint_i · ∂outputs_i/∂θ`.
    ///
    /// Only the channels a point was recorded with are read from its adjoint.
    pub fn backward(&self, model: &MlpModel, adjoints: &[PointDerivs]) -> ParamGradient {
        assert_eq!(adjoints.len(), self.points.len(), "one adjoint per recorded point");
        let mut grad = ParamGradient::zeros_like(model);
        let width = model.dims().iter().copied().max().unwrap_or(1);
        let mut abar = vec![0.0; (1 + 2 * MAX_DIM) * width];
        let mut hbar = vec![0.0; (1 + 2 * MAX_DIM) * width];
        let d = self.dim;
        let last = model.num_layers() - 1;
        // Hidden-width prefix sums; layer l's trace starts at 2·ch·prefix[l].
        let prefix: Vec<usize> = model.dims()[1..=last]
            .iter()
            .scan(0, |acc, &w| {
                let start = *acc;
                *acc += w;
                Some(start)
            })
            .collect();
        for (p, (entry, adj)) in self.points.iter().zip(adjoints).enumerate() {
            let ch = entry.channels;
            let x = self.point(p);
            abar[0] = adj.value;
            if ch > 1 {
                for k in 0..d {
                    abar[1 + k] = adj.grad[k];
                    abar[1 + d + k] = adj.second[k];
                }
            }
            if abar[..ch].iter().all(|&a| a == 0.0) {
                continue;
            }
            for l in (0..=last).rev() {
                let layer = model.layer(l);
                let (n_in, n_out) = (layer.inputs, layer.outputs);
                let w_off = model.layer_offset(l);
                let b_off = w_off + n_in * n_out;
                // Inputs to this layer.
                let owned;
                let input: &[f64] = if l == 0 {
                    owned = input_channels(x, ch);
                    &owned
                } else {
                    let o = entry.trace_offset + 2 * ch * prefix[l - 1] + ch * n_in;
                    &self.trace[o..o + ch * n_in]
                };
                {
                    let g = grad.as_mut_slice();
                    for j in 0..n_out {
                        g[b_off + j] += abar[j];
                        let grow = &mut g[w_off + j * n_in..w_off + (j + 1) * n_in];
                        for c in 0..ch {
                            let a = abar[c * n_out + j];
                            if a == 0.0 {
                                continue;
                            }
                            let h = &input[c * n_in..(c + 1) * n_in];
                            for (gw, hi) in grow.iter_mut().zip(h) {
                                *gw += a * hi;
                            }
                        }
                    }
                }
                if l == 0 {
                    break;
                }
                hbar[..ch * n_in].fill(0.0);
                for j in 0..n_out {
                    let row = &layer.weights[j * n_in..(j + 1) * n_in];
                    for c in 0..ch {
                        let a = abar[c * n_out + j];
                        if a == 0.0 {
                            continue;
                        }
                        let hb = &mut hbar[c * n_in..(c + 1) * n_in];
                        for (h, w) in hb.iter_mut().zip(row) {
                            *h += a * w;
                        }
                    }
                }
                let o = entry.trace_offset + 2 * ch * prefix[l - 1];
                let pre = &self.trace[o..o + ch * n_in];
                let post = &self.trace[o + ch * n_in..o + 2 * ch * n_in];
                tanh_backward(pre, post, &hbar[..ch * n_in], &mut abar[..ch * n_in], n_in, ch, d);
            }
        }
        grad
    }

    /// Evaluates `loss` on the recorded outputs and pulls its cotangents back
    /// to the parameters.
    ///
    /// `loss` returns the scalar loss and `∂loss/∂outputs_i` per point.
    pub fn param_gradient<F>(&self, model: &MlpModel, loss: F) -> Result<(f64, ParamGradient)>
    where
        F: FnOnce(&[PointDerivs]) -> (f64, Vec<PointDerivs>),
    {
        let (value, adjoints) = loss(&self.outputs);
        if !value.is_finite() || adjoints.iter().any(|a| !a.is_finite()) {
            return Err(Error::diverged(0, self.offending_sample(&adjoints)));
        }
        let grad = self.backward(model, &adjoints);
        if !grad.all_finite() {
            return Err(Error::diverged(0, self.offending_sample(&adjoints)));
        }
        Ok((value, grad))
    }

    fn offending_sample(&self, adjoints: &[PointDerivs]) -> Vec<f64> {
        self.outputs
            .iter()
            .zip(adjoints.iter().map(Some).chain(std::iter::repeat(None)))
            .position(|(o, a)| !o.is_finite() || a.is_some_and(|a| !a.is_finite()))
            .map(|i| self.point(i).to_vec())
            .unwrap_or_default()
    }
}

/// A point handed to [`param_gradient`].
#[derive(Debug, Clone, Copy)]
pub struct TapePoint<'a> {
    pub x: &'a [f64],
    pub order: DerivOrder,
}

/// `∇_θ loss` for a loss that depends on the network only through its
/// values and input derivatives at a fixed set of points.
pub fn param_gradient<F>(
    model: &MlpModel,
    points: &[TapePoint<'_>],
    loss: F,
) -> Result<(f64, ParamGradient)>
where
    F: FnOnce(&[PointDerivs]) -> (f64, Vec<PointDerivs>),
{
    let mut tape = JetTape::new();
    for p in points {
        tape.record(model, p.x, p.order)?;
    }
    tape.param_gradient(model, loss)
}

fn input_channels(x: &[f64], ch: usize) -> Vec<f64> {
    let d = x.len();
    let mut buf = vec![0.0; ch * d];
    buf[..d].copy_from_slice(x);
    if ch > 1 {
        for k in 0..d {
            buf[(1 + k) * d + k] = 1.0;
        }
    }
    buf
}

#[inline]
fn tanh_forward(pre: &[f64], post: &mut [f64], n: usize, ch: usize, d: usize) {
    for j in 0..n {
        let t = pre[j].tanh();
        post[j] = t;
        if ch == 1 {
            continue;
        }
        let t1 = 1.0 - t * t;
        let t2 = -2.0 * t * t1;
        for k in 0..d {
            let a1 = pre[(1 + k) * n + j];
            let a2 = pre[(1 + d + k) * n + j];
            post[(1 + k) * n + j] = t1 * a1;
            post[(1 + d + k) * n + j] = t2 * a1 * a1 + t1 * a2;
        }
    }
}

/// Adjoint of [`tanh_forward`]: maps activation cotangents to pre-activation
/// cotangents for all channels.
#[inline]
fn tanh_backward(
    pre: &[f64],
    post: &[f64],
    sbar: &[f64],
    abar: &mut [f64],
    n: usize,
    ch: usize,
    d: usize,
) {
    for j in 0..n {
        let t = post[j];
        let t1 = 1.0 - t * t;
        if ch == 1 {
            abar[j] = sbar[j] * t1;
            continue;
        }
        let t2 = -2.0 * t * t1;
        let t3 = -2.0 * t1 * t1 + 4.0 * t * t * t1;
        let mut a0 = sbar[j] * t1;
        for k in 0..d {
            let i1 = (1 + k) * n + j;
            let i2 = (1 + d + k) * n + j;
            let (a1, a2) = (pre[i1], pre[i2]);
            let (s1, s2) = (sbar[i1], sbar[i2]);
            a0 += s1 * t2 * a1 + s2 * (t3 * a1 * a1 + t2 * a2);
            abar[i1] = s1 * t1 + 2.0 * s2 * t2 * a1;
            abar[i2] = s2 * t1;
        }
        abar[j] = a0;
    }
}

/// Result of [`residual_spatial_gradient`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialGradient {
    /// `‖∇_x r²_phys(x)‖₂`.
    pub norm: f64,
    /// A stencil leg would have left the domain and a one-sided difference
    /// was used for at least one coordinate.
    pub one_sided: bool,
}

/// Euclidean norm of the spatial gradient of the squared physical residual,
/// by central differences with `h = 1e-4 · diameter(Ω)`.
pub fn residual_spatial_gradient<S: Surrogate + ?Sized>(
    field: &S,
    problem: &PdeProblem,
    x: &[f64],
) -> Result<SpatialGradient> {
    let h = 1e-4 * problem.domain().diameter();
    residual_spatial_gradient_with_step(field, problem, x, h)
}

pub fn residual_spatial_gradient_with_step<S: Surrogate + ?Sized>(
    field: &S,
    problem: &PdeProblem,
    x: &[f64],
    h: f64,
) -> Result<SpatialGradient> {
    let r2 = |p: &[f64]| -> Result<f64> {
        let r = problem.residual(field, p)?;
        Ok(r * r)
    };
    let center = r2(x)?;
    let domain = problem.domain();
    let mut sq = 0.0;
    let mut one_sided = false;
    let mut probe = [0.0; MAX_DIM];
    let probe = &mut probe[..x.len()];
    for k in 0..x.len() {
        probe.copy_from_slice(x);
        probe[k] = x[k] + h;
        let fwd_ok = domain.contains(probe);
        let fwd = if fwd_ok { Some(r2(probe)?) } else { None };
        probe[k] = x[k] - h;
        let bwd_ok = domain.contains(probe);
        let bwd = if bwd_ok { Some(r2(probe)?) } else { None };
        let dk = match (fwd, bwd) {
            (Some(f), Some(b)) => (f - b) / (2.0 * h),
            (Some(f), None) => {
                one_sided = true;
                (f - center) / h
            }
            (None, Some(b)) => {
                one_sided = true;
                (center - b) / h
            }
            (None, None) => {
                return Err(Error::config(format!(
                    "finite-difference step {h} does not fit inside the domain at {x:?}"
                )))
            }
        };
        sq += dk * dk;
    }
    Ok(SpatialGradient {
        norm: sq.sqrt(),
        one_sided,
    })
}
