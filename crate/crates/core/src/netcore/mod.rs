//! Fully-connected base network.
//!
//! Provides batched forward evaluation, one reverse-mode pass over the
//! parameters, and exact input-derivative propagation (value, gradient and
//! Laplacian) used both as an oracle and as the stacked-differentiation
//! baseline. Batches are row-major `points × features`; weights are
//! `out × in`.

mod activation;

pub use activation::{tanh, Activation};

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng;

/// Architecture of the base network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Widths from input to output, e.g. `[2, 256, 256, 256, 1]`.
    pub layer_widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl NetworkSpec {
    /// `layers` affine maps from `input_dim` to a scalar, all hidden widths
    /// equal to `hidden`.
    pub fn mlp(input_dim: usize, hidden: usize, layers: usize, output: Activation) -> Self {
        let mut layer_widths = vec![input_dim];
        layer_widths.extend(std::iter::repeat_n(hidden, layers.saturating_sub(1)));
        layer_widths.push(1);
        NetworkSpec {
            layer_widths,
            hidden_activation: Activation::Tanh,
            output_activation: output,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.layer_widths.len() >= 2, || {
            format!(
                "network needs at least 2 layer widths, got {:?}",
                self.layer_widths
            )
        })?;
        ensure(self.layer_widths.iter().all(|&w| w >= 1), || {
            format!("layer widths must be positive, got {:?}", self.layer_widths)
        })?;
        ensure(self.output_dim() == 1, || {
            format!("output width must be 1, got {}", self.output_dim())
        })?;
        ensure(self.hidden_activation == Activation::Tanh, || {
            "hidden activation must be tanh".to_string()
        })?;
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().expect("non-empty widths")
    }

    /// Number of affine layers.
    pub fn depth(&self) -> usize {
        self.layer_widths.len() - 1
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.depth() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }
}

/// One affine layer: `weight` is `out × in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(inp: usize, out: usize) -> Self {
        Dense {
            weight: Array2::zeros((out, inp)),
            bias: Array1::zeros(out),
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weight.iter().chain(self.bias.iter())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weight.iter_mut().chain(self.bias.iter_mut())
    }
}

macro_rules! layer_stack {
    ($name:ident) => {
        impl $name {
            /// All-zero stack shaped for `spec`.
            pub fn zeros(spec: &NetworkSpec) -> Self {
                $name {
                    layers: spec
                        .layer_widths
                        .windows(2)
                        .map(|w| Dense::zeros(w[0], w[1]))
                        .collect(),
                }
            }

            pub fn num_values(&self) -> usize {
                self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
            }

            /// Flat view in layer order, weights (row-major) before biases.
            pub fn iter(&self) -> impl Iterator<Item = &f64> {
                self.layers.iter().flat_map(Dense::values)
            }

            pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
                self.layers.iter_mut().flat_map(Dense::values_mut)
            }

            pub fn to_flat(&self) -> Vec<f64> {
                self.iter().copied().collect()
            }

            pub fn is_finite(&self) -> bool {
                self.iter().all(|v| v.is_finite())
            }

            pub fn check_shape(&self, spec: &NetworkSpec) -> Result<()> {
                ensure(self.layers.len() == spec.depth(), || {
                    format!(
                        "expected {} layers, got {}",
                        spec.depth(),
                        self.layers.len()
                    )
                })?;
                for (i, (layer, w)) in self.layers.iter().zip(spec.layer_widths.windows(2)).enumerate() {
                    ensure(
                        layer.weight.dim() == (w[1], w[0]) && layer.bias.len() == w[1],
                        || {
                            format!(
                                "layer {i}: expected weight {}x{} and bias {}, got {:?} and {}",
                                w[1],
                                w[0],
                                w[1],
                                layer.weight.dim(),
                                layer.bias.len()
                            )
                        },
                    )?;
                }
                Ok(())
            }
        }
    };
}

/// Weights and biases of the base network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub layers: Vec<Dense>,
}

/// Derivative of a scalar with respect to every entry of a [`ParamSet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGradient {
    pub layers: Vec<Dense>,
}

layer_stack!(ParamSet);
layer_stack!(ParamGradient);

impl ParamSet {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init_uniform(spec: &NetworkSpec, seed: u64) -> Self {
        let mut rng = rng::stream(seed, &[rng::domain::INIT]);
        let layers = spec
            .layer_widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let mut d = Dense::zeros(w[0], w[1]);
                for v in d.values_mut() {
                    *v = rng.random_range(-bound..bound);
                }
                d
            })
            .collect();
        ParamSet { layers }
    }

    /// `self += scale * delta`.
    pub fn apply(&mut self, delta: &ParamGradient, scale: f64) {
        for (p, d) in self.iter_mut().zip(delta.iter()) {
            *p += scale * d;
        }
    }
}

impl ParamGradient {
    pub fn add_assign(&mut self, other: &ParamGradient) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.iter_mut() {
            *v *= factor;
        }
    }
}

/// Exact value, input gradient and input Laplacian of the base network at a
/// single point.
#[derive(Clone, Debug, PartialEq)]
pub struct InputJet {
    pub value: f64,
    pub input_gradient: Array1<f64>,
    pub input_laplacian: f64,
}

/// Activations retained by [`Network::forward_trace`] for a backward pass.
pub struct ForwardTrace {
    /// Post-activation outputs of every layer (input excluded).
    activations: Vec<Array2<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> ArrayView1<'_, f64> {
        self.activations
            .last()
            .expect("at least one layer")
            .column(0)
    }
}

/// Base network `f(·; θ)`: architecture plus parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    spec: NetworkSpec,
    params: ParamSet,
}

impl Network {
    pub fn new(spec: NetworkSpec, params: ParamSet) -> Result<Self> {
        spec.validate()?;
        params.check_shape(&spec)?;
        ensure(params.is_finite(), || "parameters must be finite".to_string())?;
        Ok(Network { spec, params })
    }

    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let params = ParamSet::init_uniform(&spec, seed);
        Ok(Network { spec, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Mutable parameter access; shapes are fixed by the spec.
    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn into_parts(self) -> (NetworkSpec, ParamSet) {
        (self.spec, self.params)
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    fn check_batch(&self, points: &ArrayView2<f64>) -> Result<()> {
        ensure(points.ncols() == self.input_dim(), || {
            format!(
                "batch has {} columns, network expects {}",
                points.ncols(),
                self.input_dim()
            )
        })?;
        ensure(points.nrows() >= 1, || "batch must contain at least one point".to_string())
    }

    /// `f(x_i; θ)` for every row `x_i` of `points`.
    pub fn forward(&self, points: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_batch(&points)?;
        let trace = self.forward_trace(points);
        Ok(trace.output().to_owned())
    }

    /// Forward pass that keeps every layer's activations. Shapes are not
    /// checked; callers validate once per batch.
    pub fn forward_trace(&self, points: ArrayView2<f64>) -> ForwardTrace {
        let mut activations: Vec<Array2<f64>> = Vec::with_capacity(self.spec.depth());
        for (l, layer) in self.params.layers.iter().enumerate() {
            let prev = if l == 0 {
                points
            } else {
                activations[l - 1].view()
            };
            let out = affine_activate(prev, layer, self.spec.activation(l));
            activations.push(out);
        }
        ForwardTrace { activations }
    }

    /// Reverse pass for the scalar `Σ_i c_i f(x_i)` given a trace of `points`.
    ///
    /// Adds `∂/∂θ` into `param_grad` and writes `∂/∂x_i` into `input_grad`
    /// (overwriting, one row per point) when requested.
    pub fn backward(
        &self,
        points: ArrayView2<f64>,
        trace: &ForwardTrace,
        cotangents: ArrayView1<f64>,
        mut param_grad: Option<&mut ParamGradient>,
        input_grad: Option<&mut Array2<f64>>,
    ) {
        let depth = self.spec.depth();
        let rows = points.nrows();
        let last = &trace.activations[depth - 1];
        let out_act = self.spec.activation(depth - 1);
        // Cotangent of the pre-activation of the current layer.
        let mut g = Array2::<f64>::zeros((rows, 1));
        for ((gv, &c), &a) in g.iter_mut().zip(cotangents.iter()).zip(last.iter()) {
            *gv = c * out_act.derivative_from_output(a);
        }
        let mut input_grad = input_grad;
        for l in (0..depth).rev() {
            let prev = if l == 0 {
                points
            } else {
                trace.activations[l - 1].view()
            };
            let layer = &self.params.layers[l];
            if let Some(pg) = param_grad.as_deref_mut() {
                let dst = &mut pg.layers[l];
                general_mat_mul(1.0, &g.t(), &prev, 1.0, &mut dst.weight);
                dst.bias += &g.sum_axis(Axis(0));
            }
            if l == 0 {
                if let Some(ig) = input_grad.as_deref_mut() {
                    debug_assert_eq!(ig.dim(), (rows, self.input_dim()));
                    general_mat_mul(1.0, &g, &layer.weight, 0.0, ig);
                }
                break;
            }
            let mut next = Array2::<f64>::zeros((rows, layer.weight.ncols()));
            general_mat_mul(1.0, &g, &layer.weight, 0.0, &mut next);
            let act = self.spec.activation(l - 1);
            for (v, &a) in next.iter_mut().zip(trace.activations[l - 1].iter()) {
                *v *= act.derivative_from_output(a);
            }
            g = next;
        }
    }

    /// `∂(Σ_i c_i f(x_i; θ))/∂θ`.
    pub fn backward_params(
        &self,
        points: ArrayView2<f64>,
        cotangents: ArrayView1<f64>,
    ) -> Result<ParamGradient> {
        self.check_batch(&points)?;
        ensure(cotangents.len() == points.nrows(), || {
            format!(
                "expected {} cotangents, got {}",
                points.nrows(),
                cotangents.len()
            )
        })?;
        if let Some(i) = cotangents.iter().position(|c| !c.is_finite()) {
            return Err(Error::numeric(format!("cotangent {i} is not finite")));
        }
        let trace = self.forward_trace(points);
        let mut grad = ParamGradient::zeros(&self.spec);
        self.backward(points, &trace, cotangents, Some(&mut grad), None);
        Ok(grad)
    }

    /// Exact `∇_x f(x; θ)`.
    pub fn exact_input_gradient(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        let points = x.insert_axis(Axis(0));
        self.check_batch(&points)?;
        ensure(x.iter().all(|v| v.is_finite()), || "point must be finite".to_string())?;
        let trace = self.forward_trace(points);
        let mut ig = Array2::zeros((1, self.input_dim()));
        self.backward(points, &trace, ArrayView1::from(&[1.0]), None, Some(&mut ig));
        Ok(ig.row(0).to_owned())
    }

    /// Exact `(f, ∇f, Δf)` at one point by layerwise propagation.
    pub fn exact_input_laplacian(&self, x: ArrayView1<f64>) -> Result<InputJet> {
        let points = x.insert_axis(Axis(0));
        let mut jets = self.exact_input_laplacian_batch(points)?;
        Ok(jets.pop().expect("one point"))
    }

    /// Exact jets for every row of `points`.
    ///
    /// For `a' = φ(W a + b)` the propagated quantities are the input Jacobian
    /// `J' = diag(φ′) W J` and the Laplacian vector
    /// `L' = φ″ ⊙ rowsumsq(W J) + φ′ ⊙ (W L)`. Cost per point is
    /// `Θ(width² · d)`; jacobians of a block of points are stacked side by
    /// side so each layer is one matrix product.
    pub fn exact_input_laplacian_batch(&self, points: ArrayView2<f64>) -> Result<Vec<InputJet>> {
        self.check_batch(&points)?;
        ensure(points.iter().all(|v| v.is_finite()), || "points must be finite".to_string())?;
        let d = self.input_dim();
        let max_width = self.spec.layer_widths.iter().copied().max().unwrap_or(1);
        // ~4M doubles of jacobian per block.
        let block = (4_000_000 / (max_width * d)).clamp(1, 256);
        let mut jets = Vec::with_capacity(points.nrows());
        for start in (0..points.nrows()).step_by(block) {
            let end = (start + block).min(points.nrows());
            self.jets_block(points.slice(s![start..end, ..]), &mut jets);
        }
        Ok(jets)
    }

    fn jets_block(&self, points: ArrayView2<f64>, jets: &mut Vec<InputJet>) {
        let d = self.input_dim();
        let n = points.nrows();
        let trace = self.forward_trace(points);
        // jac: width × (n·d), column block s holds J for point s.
        // lap: width × n.
        let mut jac: Option<Array2<f64>> = None;
        let mut lap: Option<Array2<f64>> = None;
        for (l, layer) in self.params.layers.iter().enumerate() {
            let act = self.spec.activation(l);
            let out = layer.weight.nrows();
            let a = &trace.activations[l];
            let (mut wj, wl) = match (&jac, &lap) {
                (None, _) => {
                    let mut wj = Array2::<f64>::zeros((out, n * d));
                    for s in 0..n {
                        wj.slice_mut(s![.., s * d..(s + 1) * d]).assign(&layer.weight);
                    }
                    (wj, Array2::<f64>::zeros((out, n)))
                }
                (Some(j), Some(lp)) => {
                    let mut wj = Array2::<f64>::zeros((out, n * d));
                    general_mat_mul(1.0, &layer.weight, j, 0.0, &mut wj);
                    let mut wl = Array2::<f64>::zeros((out, n));
                    general_mat_mul(1.0, &layer.weight, lp, 0.0, &mut wl);
                    (wj, wl)
                }
                _ => unreachable!(),
            };
            let mut new_lap = Array2::<f64>::zeros((out, n));
            for s in 0..n {
                for o in 0..out {
                    let av = a[[s, o]];
                    let d1 = act.derivative_from_output(av);
                    let d2 = act.second_derivative_from_output(av);
                    let mut row = wj.slice_mut(s![o, s * d..(s + 1) * d]);
                    let sumsq: f64 = row.iter().map(|v| v * v).sum();
                    new_lap[[o, s]] = d2 * sumsq + d1 * wl[[o, s]];
                    row.mapv_inplace(|v| v * d1);
                }
            }
            jac = Some(wj);
            lap = Some(new_lap);
        }
        let jac = jac.expect("at least one layer");
        let lap = lap.expect("at least one layer");
        let values = trace.output();
        for s in 0..n {
            jets.push(InputJet {
                value: values[s],
                input_gradient: jac.slice(s![0, s * d..(s + 1) * d]).to_owned(),
                input_laplacian: lap[[0, s]],
            });
        }
    }
}

/// `φ(prev · Wᵀ + b)` for a batch.
fn affine_activate(prev: ArrayView2<f64>, layer: &Dense, act: Activation) -> Array2<f64> {
    let rows = prev.nrows();
    let out = layer.weight.nrows();
    let mut z = Array2::<f64>::zeros((rows, out));
    general_mat_mul(1.0, &prev, &layer.weight.t(), 0.0, &mut z);
    let bias = layer.bias.as_slice().expect("contiguous bias");
    act.bias_apply_rows(z.as_slice_mut().expect("standard layout"), bias);
    z
}
