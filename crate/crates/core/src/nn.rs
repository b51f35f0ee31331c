//! Local sine networks with exact input derivatives and parameter gradients.
//!
//! A network is a small DAG of dense layers. Hidden layers use `sin`, output
//! layers are affine. A branched head (used for Stokes) slices the last trunk
//! layer into disjoint groups, each followed by a private hidden layer and a
//! scalar output.
//!
//! Evaluation works on batches. For a batch of `P` points every node stores a
//! `width × (C·P)` matrix whose column blocks are the channels
//! `[value, ∂/∂x_0, …, ∂/∂x_{d-1}, Δ]` (only the first `C` channels the
//! requested [`DerivOrder`] needs). Dense layers act on all channels with one
//! matrix product; `sin` propagates the triple exactly:
//!
//! ```text
//! a = sin z,   ∇a = cos z · ∇z,   Δa = cos z · Δz − sin z · |∇z|²
//! ```
//!
//! [`Network::backward`] runs reverse accumulation through this extended
//! forward pass, so losses may depend on values, input gradients and
//! Laplacians of the outputs.

use alloc::vec;
use alloc::vec::Vec;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng;

/// Initial value of every bias.
pub const BIAS_INIT: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("loss requested {0:?} but the batch was evaluated only up to {1:?}")]
    UnsupportedPrimitive(Primitive, DerivOrder),
}

/// Split of the last trunk layer into independent output branches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchSpec {
    /// 1-based index of the hidden layer whose neurons are sliced.
    pub split_layer_index: usize,
    /// Width of each slice and of each private hidden layer.
    pub branch_width: usize,
    pub branch_count: usize,
}

/// Architecture of one local network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    /// Trunk hidden layer widths, all `sin`-activated.
    pub hidden_widths: Vec<usize>,
    #[serde(default)]
    pub branch: Option<BranchSpec>,
    pub output_dim: usize,
}

impl NetworkSpec {
    /// Fully connected scalar network with `depth` hidden layers of `width`.
    pub fn scalar(input_dim: usize, depth: usize, width: usize) -> Self {
        Self { input_dim, hidden_widths: vec![width; depth], branch: None, output_dim: 1 }
    }

    /// Three 90-wide trunk layers, sliced into three 30-wide branches with one
    /// private 30-wide layer each, producing `(u, v, p)`.
    pub fn stokes_branched() -> Self {
        Self {
            input_dim: 2,
            hidden_widths: vec![90, 90, 90],
            branch: Some(BranchSpec { split_layer_index: 3, branch_width: 30, branch_count: 3 }),
            output_dim: 3,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_dim == 0 {
            return Err(NnError::InvalidSpec("input_dim must be positive"));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(NnError::InvalidSpec("hidden widths must be non-empty and positive"));
        }
        match &self.branch {
            None if self.output_dim == 0 => Err(NnError::InvalidSpec("output_dim must be positive")),
            None => Ok(()),
            Some(b) => {
                if b.split_layer_index != self.hidden_widths.len() {
                    return Err(NnError::InvalidSpec("branches must split the last trunk layer"));
                }
                if b.branch_width == 0 || b.branch_count == 0 {
                    return Err(NnError::InvalidSpec("branch width and count must be positive"));
                }
                if b.branch_width * b.branch_count != self.hidden_widths[b.split_layer_index - 1] {
                    return Err(NnError::InvalidSpec("branch_count × branch_width must equal the split layer width"));
                }
                if self.output_dim != b.branch_count {
                    return Err(NnError::InvalidSpec("output_dim must equal branch_count"));
                }
                Ok(())
            }
        }
    }

    /// Number of weights and biases.
    pub fn param_count(&self) -> usize {
        Layout::build(self).map(|l| l.len).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Sine,
    Identity,
}

/// One dense layer inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    /// Node the layer reads from (0 is the input).
    pub source: usize,
    /// First row of the source node that feeds this layer.
    pub source_start: usize,
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
    /// Start of the row-major `fan_out × fan_in` weight block.
    pub weight_offset: usize,
    pub bias_offset: usize,
}

/// Index table of a flat parameter vector. Layer `k` writes node `k + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub layers: Vec<LayerShape>,
    /// `(node, row)` of every network output.
    pub outputs: Vec<(usize, usize)>,
    pub len: usize,
}

impl Layout {
    fn build(spec: &NetworkSpec) -> Result<Self, NnError> {
        spec.validate()?;
        let mut layers = Vec::new();
        let mut offset = 0;
        let mut push = |layers: &mut Vec<LayerShape>, source, source_start, fan_in, fan_out, activation| {
            layers.push(LayerShape {
                source,
                source_start,
                fan_in,
                fan_out,
                activation,
                weight_offset: offset,
                bias_offset: offset + fan_in * fan_out,
            });
            offset += fan_in * fan_out + fan_out;
        };
        let mut width = spec.input_dim;
        for (k, &w) in spec.hidden_widths.iter().enumerate() {
            push(&mut layers, k, 0, width, w, Activation::Sine);
            width = w;
        }
        let trunk_out = spec.hidden_widths.len();
        let mut outputs = Vec::new();
        match &spec.branch {
            None => {
                push(&mut layers, trunk_out, 0, width, spec.output_dim, Activation::Identity);
                outputs.extend((0..spec.output_dim).map(|r| (layers.len(), r)));
            }
            Some(b) => {
                for g in 0..b.branch_count {
                    push(&mut layers, trunk_out, g * b.branch_width, b.branch_width, b.branch_width, Activation::Sine);
                    let hidden = layers.len();
                    push(&mut layers, hidden, 0, b.branch_width, 1, Activation::Identity);
                    outputs.push((layers.len(), 0));
                }
            }
        }
        Ok(Self { layers, outputs, len: offset })
    }
}

/// Flat parameter storage for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub values: Vec<f64>,
    /// `(fan_out, fan_in)` per layer, in storage order.
    pub shapes: Vec<(usize, usize)>,
}

impl Params {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Per-layer `(weights, bias)` copies.
    pub fn unflatten(&self) -> Vec<(Array2<f64>, Array1<f64>)> {
        let mut at = 0;
        self.shapes
            .iter()
            .map(|&(rows, cols)| {
                let w = Array2::from_shape_vec((rows, cols), self.values[at..at + rows * cols].to_vec())
                    .expect("shape table matches storage");
                at += rows * cols;
                let b = Array1::from(self.values[at..at + rows].to_vec());
                at += rows;
                (w, b)
            })
            .collect()
    }

    /// Inverse of [`Params::unflatten`].
    pub fn flatten(layers: &[(Array2<f64>, Array1<f64>)]) -> Result<Self, NnError> {
        let mut values = Vec::new();
        let mut shapes = Vec::new();
        for (w, b) in layers {
            if b.len() != w.nrows() {
                return Err(NnError::DimensionMismatch { expected: w.nrows(), got: b.len() });
            }
            shapes.push(w.dim());
            values.extend(w.iter().copied());
            values.extend(b.iter().copied());
        }
        Ok(Self { values, shapes })
    }
}

/// Highest derivative quantity a batch evaluation tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DerivOrder {
    Value,
    Gradient,
    Laplacian,
}

impl DerivOrder {
    /// Number of channel blocks for `input_dim` inputs.
    pub fn channels(self, input_dim: usize) -> usize {
        match self {
            DerivOrder::Value => 1,
            DerivOrder::Gradient => 1 + input_dim,
            DerivOrder::Laplacian => 2 + input_dim,
        }
    }
}

/// Output quantity a loss can depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    Value,
    Gradient(usize),
    Laplacian,
}

impl Primitive {
    fn required(self) -> DerivOrder {
        match self {
            Primitive::Value => DerivOrder::Value,
            Primitive::Gradient(_) => DerivOrder::Gradient,
            Primitive::Laplacian => DerivOrder::Laplacian,
        }
    }
}

/// Value, input gradient and Laplacian of every output at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalBundle {
    pub value: Vec<f64>,
    pub grad_x: Vec<Vec<f64>>,
    pub laplacian: Vec<f64>,
}

/// Compiled network: spec plus parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    layout: Layout,
}

/// Forward state of one batch, kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct BatchEval {
    order: DerivOrder,
    n_points: usize,
    input_dim: usize,
    /// Node activations, node 0 is the input.
    nodes: Vec<Array2<f64>>,
    /// Pre-activations and `cos z` of sine layers.
    pre: Vec<Option<(Array2<f64>, Array2<f64>)>>,
    outputs: Vec<(usize, usize)>,
}

/// Adjoint of the network outputs, same channel layout as [`BatchEval`].
#[derive(Debug, Clone)]
pub struct BatchSeed {
    order: DerivOrder,
    n_points: usize,
    input_dim: usize,
    data: Array2<f64>,
}

fn channel_index(p: Primitive, input_dim: usize) -> usize {
    match p {
        Primitive::Value => 0,
        Primitive::Gradient(k) => 1 + k,
        Primitive::Laplacian => 1 + input_dim,
    }
}

fn check_primitive(p: Primitive, order: DerivOrder, input_dim: usize) -> Result<(), NnError> {
    if let Primitive::Gradient(k) = p {
        if k >= input_dim {
            return Err(NnError::DimensionMismatch { expected: input_dim, got: k + 1 });
        }
    }
    if p.required() > order {
        return Err(NnError::UnsupportedPrimitive(p, order));
    }
    Ok(())
}

impl BatchEval {
    pub fn order(&self) -> DerivOrder {
        self.order
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.len()
    }

    /// Values of `primitive` for output `o` at every point of the batch.
    pub fn get(&self, o: usize, primitive: Primitive) -> Result<ArrayView1<'_, f64>, NnError> {
        check_primitive(primitive, self.order, self.input_dim)?;
        let (node, row) = self.outputs[o];
        let c = channel_index(primitive, self.input_dim);
        let p = self.n_points;
        Ok(self.nodes[node].slice(s![row, c * p..(c + 1) * p]))
    }

    pub fn value(&self, o: usize) -> ArrayView1<'_, f64> {
        self.get(o, Primitive::Value).expect("value is always tracked")
    }

    pub fn gradient(&self, o: usize, k: usize) -> Result<ArrayView1<'_, f64>, NnError> {
        self.get(o, Primitive::Gradient(k))
    }

    pub fn laplacian(&self, o: usize) -> Result<ArrayView1<'_, f64>, NnError> {
        self.get(o, Primitive::Laplacian)
    }

    /// Zero adjoint matching this batch.
    pub fn zero_seed(&self) -> BatchSeed {
        BatchSeed {
            order: self.order,
            n_points: self.n_points,
            input_dim: self.input_dim,
            data: Array2::zeros((self.outputs.len(), self.order.channels(self.input_dim) * self.n_points)),
        }
    }
}

impl BatchSeed {
    /// Mutable adjoint of `primitive` for output `o`, one entry per point.
    pub fn get_mut(&mut self, o: usize, primitive: Primitive) -> Result<&mut [f64], NnError> {
        check_primitive(primitive, self.order, self.input_dim)?;
        let c = channel_index(primitive, self.input_dim);
        let p = self.n_points;
        let row = self.data.row_mut(o).into_slice().expect("standard layout");
        Ok(&mut row[c * p..(c + 1) * p])
    }

    pub fn value_mut(&mut self, o: usize) -> &mut [f64] {
        self.get_mut(o, Primitive::Value).expect("value is always tracked")
    }

    pub fn gradient_mut(&mut self, o: usize, k: usize) -> Result<&mut [f64], NnError> {
        self.get_mut(o, Primitive::Gradient(k))
    }

    pub fn laplacian_mut(&mut self, o: usize) -> Result<&mut [f64], NnError> {
        self.get_mut(o, Primitive::Laplacian)
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self, NnError> {
        let layout = Layout::build(&spec)?;
        Ok(Self { spec, layout })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.len
    }

    pub fn output_dim(&self) -> usize {
        self.layout.outputs.len()
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        self.layout.layers.iter().map(|l| (l.fan_out, l.fan_in)).collect()
    }

    /// Xavier-normal weights (gain 1), biases [`BIAS_INIT`], drawn from `rng`.
    pub fn init_params_with<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Params {
        let mut values = vec![0.0; self.layout.len];
        for l in &self.layout.layers {
            let std = libm::sqrt(2.0 / (l.fan_in + l.fan_out) as f64);
            for w in &mut values[l.weight_offset..l.bias_offset] {
                let z: f64 = StandardNormal.sample(rng);
                *w = std * z;
            }
            values[l.bias_offset..l.bias_offset + l.fan_out].fill(BIAS_INIT);
        }
        Params { values, shapes: self.shapes() }
    }

    /// Deterministic initialisation from a seed.
    pub fn init_params(&self, seed: u64) -> Params {
        self.init_params_with(&mut rng::stream(seed, rng::STREAM_INIT))
    }

    /// Wraps raw values after checking their length.
    pub fn params_from_values(&self, values: Vec<f64>) -> Result<Params, NnError> {
        if values.len() != self.layout.len {
            return Err(NnError::DimensionMismatch { expected: self.layout.len, got: values.len() });
        }
        Ok(Params { values, shapes: self.shapes() })
    }

    fn check_params(&self, params: &Params) -> Result<(), NnError> {
        if params.values.len() != self.layout.len {
            return Err(NnError::DimensionMismatch { expected: self.layout.len, got: params.values.len() });
        }
        Ok(())
    }

    fn weights<'a>(&self, params: &'a Params, l: &LayerShape) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((l.fan_out, l.fan_in), &params.values[l.weight_offset..l.bias_offset])
            .expect("layout is consistent")
    }

    /// Output values at one point.
    pub fn forward(&self, params: &Params, x: &[f64]) -> Result<Vec<f64>, NnError> {
        let pts = self.single_point(x)?;
        let eval = self.eval_batch(params, pts.view(), DerivOrder::Value)?;
        Ok((0..self.output_dim()).map(|o| eval.value(o)[0]).collect())
    }

    /// Outputs with exact input gradients and Laplacians at one point.
    pub fn forward_derivs(&self, params: &Params, x: &[f64]) -> Result<EvalBundle, NnError> {
        let pts = self.single_point(x)?;
        let eval = self.eval_batch(params, pts.view(), DerivOrder::Laplacian)?;
        let d = self.spec.input_dim;
        let n = self.output_dim();
        Ok(EvalBundle {
            value: (0..n).map(|o| eval.value(o)[0]).collect(),
            grad_x: (0..n).map(|o| (0..d).map(|k| eval.gradient(o, k).unwrap()[0]).collect()).collect(),
            laplacian: (0..n).map(|o| eval.laplacian(o).unwrap()[0]).collect(),
        })
    }

    fn single_point(&self, x: &[f64]) -> Result<Array2<f64>, NnError> {
        if x.len() != self.spec.input_dim {
            return Err(NnError::DimensionMismatch { expected: self.spec.input_dim, got: x.len() });
        }
        Ok(Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("one row"))
    }

    /// Evaluates a batch of points (rows of `points`) up to `order`.
    pub fn eval_batch(&self, params: &Params, points: ArrayView2<'_, f64>, order: DerivOrder) -> Result<BatchEval, NnError> {
        self.check_params(params)?;
        let d = self.spec.input_dim;
        if points.ncols() != d {
            return Err(NnError::DimensionMismatch { expected: d, got: points.ncols() });
        }
        let p = points.nrows();
        let ch = order.channels(d);

        let mut input = Array2::zeros((d, ch * p));
        input.slice_mut(s![.., 0..p]).assign(&points.t());
        if order >= DerivOrder::Gradient {
            for k in 0..d {
                input.slice_mut(s![k, (1 + k) * p..(2 + k) * p]).fill(1.0);
            }
        }

        let mut nodes = Vec::with_capacity(self.layout.layers.len() + 1);
        nodes.push(input);
        let mut pre = Vec::with_capacity(self.layout.layers.len());
        for l in &self.layout.layers {
            let w = self.weights(params, l);
            let bias = &params.values[l.bias_offset..l.bias_offset + l.fan_out];
            let src = nodes[l.source].slice(s![l.source_start..l.source_start + l.fan_in, ..]);
            let mut z = Array2::zeros((l.fan_out, ch * p));
            general_mat_mul(1.0, &w, &src, 0.0, &mut z);
            for (i, &b) in bias.iter().enumerate() {
                z.slice_mut(s![i, 0..p]).mapv_inplace(|v| v + b);
            }
            match l.activation {
                Activation::Identity => {
                    nodes.push(z);
                    pre.push(None);
                }
                Activation::Sine => {
                    let (a, cos) = sine_forward(&z, order, d, p);
                    nodes.push(a);
                    pre.push(Some((z, cos)));
                }
            }
        }
        Ok(BatchEval { order, n_points: p, input_dim: d, nodes, pre, outputs: self.layout.outputs.clone() })
    }

    /// Accumulates `∂loss/∂θ` into `grad` given the output adjoint `seed`.
    pub fn backward(&self, params: &Params, eval: &BatchEval, seed: &BatchSeed, grad: &mut [f64]) -> Result<(), NnError> {
        self.check_params(params)?;
        if grad.len() != self.layout.len {
            return Err(NnError::DimensionMismatch { expected: self.layout.len, got: grad.len() });
        }
        if seed.order != eval.order || seed.n_points != eval.n_points {
            return Err(NnError::DimensionMismatch { expected: eval.n_points, got: seed.n_points });
        }
        let d = eval.input_dim;
        let p = eval.n_points;
        if p == 0 {
            return Ok(());
        }
        let cols = eval.order.channels(d) * p;
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; eval.nodes.len()];
        for (o, &(node, row)) in eval.outputs.iter().enumerate() {
            let a = adj[node].get_or_insert_with(|| Array2::zeros((eval.nodes[node].nrows(), cols)));
            let mut r = a.row_mut(row);
            r += &seed.data.row(o);
        }
        for (k, l) in self.layout.layers.iter().enumerate().rev() {
            let Some(out_adj) = adj[k + 1].take() else { continue };
            let zbar = match (&eval.pre[k], l.activation) {
                (Some((z, cos)), Activation::Sine) => sine_backward(z, cos, &eval.nodes[k + 1], &out_adj, eval.order, d, p),
                _ => out_adj,
            };
            let src = eval.nodes[l.source].slice(s![l.source_start..l.source_start + l.fan_in, ..]);
            {
                let (gw, gb) = grad[l.weight_offset..l.bias_offset + l.fan_out].split_at_mut(l.fan_in * l.fan_out);
                let mut gw = ArrayViewMut2::from_shape((l.fan_out, l.fan_in), gw).expect("layout is consistent");
                general_mat_mul(1.0, &zbar, &src.t(), 1.0, &mut gw);
                for (i, g) in gb.iter_mut().enumerate() {
                    *g += zbar.slice(s![i, 0..p]).sum();
                }
            }
            if l.source != 0 {
                let w = self.weights(params, l);
                let rows = eval.nodes[l.source].nrows();
                let a = adj[l.source].get_or_insert_with(|| Array2::zeros((rows, cols)));
                let mut target = a.slice_mut(s![l.source_start..l.source_start + l.fan_in, ..]);
                general_mat_mul(1.0, &w.t(), &zbar, 1.0, &mut target);
            }
        }
        Ok(())
    }

    /// Value and parameter gradient of a scalar functional of one batch.
    ///
    /// `loss` reads the batch outputs and writes `∂loss/∂(output quantity)`
    /// into the seed; it fails with [`NnError::UnsupportedPrimitive`] when it
    /// touches a quantity `order` does not track.
    pub fn loss_param_gradient<F>(
        &self,
        params: &Params,
        points: ArrayView2<'_, f64>,
        order: DerivOrder,
        loss: F,
    ) -> Result<(f64, Vec<f64>), NnError>
    where
        F: FnOnce(&BatchEval, &mut BatchSeed) -> Result<f64, NnError>,
    {
        let eval = self.eval_batch(params, points, order)?;
        let mut seed = eval.zero_seed();
        let value = loss(&eval, &mut seed)?;
        let mut grad = vec![0.0; self.layout.len];
        self.backward(params, &eval, &seed, &mut grad)?;
        Ok((value, grad))
    }
}

/// Convenience wrapper: compile `spec` and draw parameters for `seed`.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<Params, NnError> {
    Ok(Network::new(spec.clone())?.init_params(seed))
}

/// Row-major view of a point list.
pub fn points_view(points: &[crate::Point]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((points.len(), 2), points.as_flattened()).expect("two coordinates per point")
}

fn sine_forward(z: &Array2<f64>, order: DerivOrder, d: usize, p: usize) -> (Array2<f64>, Array2<f64>) {
    let (m, cols) = z.dim();
    let mut a = Array2::zeros((m, cols));
    let mut cos = Array2::zeros((m, p));
    for i in 0..m {
        let zr = z.row(i);
        let zr = zr.as_slice().expect("standard layout");
        let mut ar = a.row_mut(i);
        let ar = ar.as_slice_mut().expect("standard layout");
        let mut cr = cos.row_mut(i);
        let cr = cr.as_slice_mut().expect("standard layout");
        for q in 0..p {
            let (sv, cv) = libm::sincos(zr[q]);
            ar[q] = sv;
            cr[q] = cv;
        }
        if order >= DerivOrder::Gradient {
            for k in 0..d {
                let off = (1 + k) * p;
                for q in 0..p {
                    ar[off + q] = cr[q] * zr[off + q];
                }
            }
        }
        if order == DerivOrder::Laplacian {
            let off = (1 + d) * p;
            for q in 0..p {
                let mut sq = 0.0;
                for k in 0..d {
                    let g = zr[(1 + k) * p + q];
                    sq += g * g;
                }
                ar[off + q] = cr[q] * zr[off + q] - ar[q] * sq;
            }
        }
    }
    (a, cos)
}

fn sine_backward(
    z: &Array2<f64>,
    cos: &Array2<f64>,
    a: &Array2<f64>,
    abar: &Array2<f64>,
    order: DerivOrder,
    d: usize,
    p: usize,
) -> Array2<f64> {
    let (m, cols) = z.dim();
    let mut zbar = Array2::zeros((m, cols));
    for i in 0..m {
        let zr = z.row(i);
        let zr = zr.as_slice().expect("standard layout");
        let cr = cos.row(i);
        let cr = cr.as_slice().expect("standard layout");
        let ar = a.row(i);
        let ar = ar.as_slice().expect("standard layout");
        let br = abar.row(i);
        let br = br.as_slice().expect("standard layout");
        let mut out = zbar.row_mut(i);
        let out = out.as_slice_mut().expect("standard layout");
        for q in 0..p {
            let c = cr[q];
            let sn = ar[q];
            let mut v = c * br[q];
            if order >= DerivOrder::Gradient {
                for k in 0..d {
                    let off = (1 + k) * p + q;
                    v -= sn * zr[off] * br[off];
                    out[off] = c * br[off];
                }
            }
            if order == DerivOrder::Laplacian {
                let off = (1 + d) * p + q;
                let lbar = br[off];
                let mut sq = 0.0;
                for k in 0..d {
                    let g = zr[(1 + k) * p + q];
                    sq += g * g;
                    out[(1 + k) * p + q] -= 2.0 * sn * g * lbar;
                }
                v -= (sn * zr[off] + c * sq) * lbar;
                out[off] = c * lbar;
            }
            out[q] = v;
        }
    }
    zbar
}
