//! Fully connected tanh networks with a scalar linear output.
//!
//! Parameters live in one flat buffer. Layer `l` maps `dims[l] -> dims[l + 1]`
//! and stores its weights row-major (`out x in`) followed by its biases, so a
//! [`ParamGradient`](crate::autodiff::ParamGradient) is just another buffer of
//! the same length.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::seeding::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum XavierScheme {
    #[default]
    Normal,
    Uniform,
}

impl std::str::FromStr for XavierScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" => Ok(XavierScheme::Normal),
            "uniform" => Ok(XavierScheme::Uniform),
            other => Err(Error::config(format!("unknown init scheme `{other}`"))),
        }
    }
}

impl std::fmt::Display for XavierScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            XavierScheme::Normal => "normal",
            XavierScheme::Uniform => "uniform",
        })
    }
}

/// A dense tanh network `input_dim -> width -> ... -> width -> 1`.
///
/// `depth` counts hidden layers, so `depth = 3, width = 20` has four weight
/// matrices. A model with no hidden layers is a plain affine map, which the
/// tests use for hand-built networks.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    params: Vec<f64>,
    seed: Option<u64>,
}

/// Borrowed view of one layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerView<'a> {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: &'a [f64],
    pub biases: &'a [f64],
}

impl MlpModel {
    /// Builds a model from explicit `(weights, biases)` per layer.
    pub fn from_layers(input_dim: usize, layers: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        if input_dim == 0 || layers.is_empty() {
            return Err(Error::config("a model needs at least one input and one layer"));
        }
        let mut dims = vec![input_dim];
        let mut params = Vec::new();
        for (l, (w, b)) in layers.into_iter().enumerate() {
            let inputs = dims[l];
            let outputs = b.len();
            if outputs == 0 || w.len() != inputs * outputs {
                return Err(Error::config(format!(
                    "layer {l}: weight length {} does not match {inputs}x{outputs}",
                    w.len()
                )));
            }
            dims.push(outputs);
            params.extend(w);
            params.extend(b);
        }
        if *dims.last().unwrap() != 1 {
            return Err(Error::config("the output layer must have exactly one unit"));
        }
        Self::from_parts(dims, params, None)
    }

    fn from_parts(dims: Vec<usize>, params: Vec<f64>, seed: Option<u64>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(dims.len());
        let mut off = 0;
        for pair in dims.windows(2) {
            offsets.push(off);
            off += pair[0] * pair[1] + pair[1];
        }
        offsets.push(off);
        if off != params.len() {
            return Err(Error::config(format!(
                "expected {off} parameters for dims {dims:?}, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::config("model parameters must be finite"));
        }
        Ok(Self {
            dims,
            offsets,
            params,
            seed,
        })
    }

    /// Model with every parameter zero.
    pub fn zeros(input_dim: usize, depth: usize, width: usize) -> Self {
        let dims = layer_dims(input_dim, depth, width);
        let n = dims.windows(2).map(|p| p[0] * p[1] + p[1]).sum();
        Self::from_parts(dims, vec![0.0; n], None).expect("consistent shape")
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    /// Number of hidden (tanh) layers.
    pub fn depth(&self) -> usize {
        self.dims.len() - 2
    }

    /// Layer widths from input to output, e.g. `[1, 20, 20, 20, 1]`.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn layer(&self, l: usize) -> LayerView<'_> {
        let (inputs, outputs) = (self.dims[l], self.dims[l + 1]);
        let start = self.offsets[l];
        let split = start + inputs * outputs;
        LayerView {
            inputs,
            outputs,
            weights: &self.params[start..split],
            biases: &self.params[split..self.offsets[l + 1]],
        }
    }

    /// Offset of layer `l` in the flat parameter buffer.
    pub(crate) fn layer_offset(&self, l: usize) -> usize {
        self.offsets[l]
    }

    pub fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `u_theta(x)`.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.forward_generic(x))
    }

    /// Forward pass over any [`Real`] scalar. Panics on a dimension mismatch.
    pub fn forward_generic<T: Real>(&self, x: &[T]) -> T {
        assert_eq!(x.len(), self.input_dim(), "input dimension");
        let mut h: Vec<T> = x.to_vec();
        let last = self.num_layers() - 1;
        for l in 0..=last {
            let layer = self.layer(l);
            let mut next = Vec::with_capacity(layer.outputs);
            for j in 0..layer.outputs {
                let row = &layer.weights[j * layer.inputs..(j + 1) * layer.inputs];
                let mut acc = T::from_f64(layer.biases[j]);
                for (w, hi) in row.iter().zip(&h) {
                    acc = acc + hi.scale(*w);
                }
                next.push(if l == last { acc } else { acc.tanh() });
            }
            h = next;
        }
        h[0]
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Writes a one-line JSON header followed by the parameters as
    /// little-endian `f64`.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.to_string(),
            version: 1,
            layer_dims: self.dims.clone(),
            activation: "tanh".to_string(),
            seed: self.seed,
            num_params: self.params.len(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for p in &self.params {
            out.write_all(&p.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(mut input: R) -> Result<Self> {
        let mut line = String::new();
        input.read_line(&mut line)?;
        let header: CheckpointHeader = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.format != CHECKPOINT_FORMAT || header.activation != "tanh" {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} / activation {}",
                header.format, header.activation
            )));
        }
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() != header.num_params * 8 {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter bytes, found {}",
                header.num_params * 8,
                bytes.len()
            )));
        }
        let params = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_parts(header.layer_dims, params, header.seed)
            .map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_checkpoint(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_checkpoint(std::io::BufReader::new(file))
    }
}

const CHECKPOINT_FORMAT: &str = "cdr-pinn-mlp";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    layer_dims: Vec<usize>,
    activation: String,
    seed: Option<u64>,
    num_params: usize,
}

pub fn layer_dims(input_dim: usize, depth: usize, width: usize) -> Vec<usize> {
    let mut dims = vec![input_dim];
    dims.extend(std::iter::repeat_n(width, depth));
    dims.push(1);
    dims
}

/// Xavier/Glorot initialization with zero biases.
pub fn init_xavier(
    input_dim: usize,
    depth: usize,
    width: usize,
    scheme: XavierScheme,
    seed: u64,
) -> Result<MlpModel> {
    if input_dim == 0 || depth == 0 || width == 0 {
        return Err(Error::config(format!(
            "invalid network shape: input_dim={input_dim}, depth={depth}, width={width}"
        )));
    }
    let dims = layer_dims(input_dim, depth, width);
    let mut rng = seeding::rng(seed, Stream::Init);
    let mut params = Vec::new();
    for pair in dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let n = fan_in * fan_out;
        let fan_sum = (fan_in + fan_out) as f64;
        match scheme {
            XavierScheme::Normal => {
                let dist = Normal::new(0.0, (2.0 / fan_sum).sqrt()).expect("positive std");
                params.extend(dist.sample_iter(&mut rng).take(n));
            }
            XavierScheme::Uniform => {
                let a = (6.0 / fan_sum).sqrt();
                let dist = Uniform::new_inclusive(-a, a).expect("valid bounds");
                params.extend((0..n).map(|_| rng.sample(dist)));
            }
        }
        params.extend(std::iter::repeat_n(0.0, fan_out));
    }
    MlpModel::from_parts(dims, params, Some(seed))
}
