//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as it is evaluated. Node ids grow
//! monotonically, so reverse id order is a reverse topological order and
//! [`Graph::backward`] visits each node once.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Mul,
    Max,
    Relu,
    Sigmoid,
    Exp,
    Log,
    Neg,
    Abs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    Max,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Max(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Neg(Var),
    Abs(Var),
    ClampMin(Var, f64),
    Softmax(Var, f64),
    Sum(Var, Option<usize>),
    Mean(Var, Option<usize>),
    /// Source indices (flat) of the selected maxima.
    ReduceMax(Var, Vec<usize>),
}

/// One recorded operation: its forward value, its tag and its parents.
#[derive(Debug, Clone)]
pub struct TapeNode {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

impl TapeNode {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn parents(&self) -> Vec<Var> {
        match self.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b)
            | Op::AddBias(a, b)
            | Op::Add(a, b)
            | Op::Mul(a, b)
            | Op::Max(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Neg(a)
            | Op::Abs(a)
            | Op::ClampMin(a, _)
            | Op::Softmax(a, _)
            | Op::Sum(a, _)
            | Op::Mean(a, _)
            | Op::ReduceMax(a, _) => vec![a],
        }
    }
}

/// Named parameter tensors with a fixed iteration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    entries: Vec<(String, Tensor)>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::Contract(alloc::format!(
                "duplicate parameter name {name:?}"
            )));
        }
        self.entries.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Registers every tensor as a named parameter leaf, in order.
    pub fn bind(&self, graph: &mut Graph) -> Vec<Var> {
        self.entries
            .iter()
            .map(|(n, t)| graph.parameter(n.clone(), t.clone()))
            .collect()
    }
}

/// Gradient per named parameter, in the order the parameters were bound.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterGradients {
    entries: Vec<(String, Tensor)>,
}

impl ParameterGradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Adjoints for every node reached by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(String, Var)>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros if `var` was not reached.
    pub fn wrt(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    /// Gradients for `vars` (as returned by [`ParameterSet::bind`]), named
    /// after `params`. Use this when several networks share one graph.
    pub fn for_bound(&self, params: &ParameterSet, vars: &[Var]) -> ParameterGradients {
        ParameterGradients {
            entries: params
                .names()
                .zip(vars)
                .map(|(n, v)| (n.to_string(), self.wrt(*v)))
                .collect(),
        }
    }

    pub fn parameters(&self) -> ParameterGradients {
        ParameterGradients {
            entries: self
                .params
                .iter()
                .map(|(n, v)| (n.clone(), self.wrt(*v)))
                .collect(),
        }
    }
}

/// The tape: a growing list of [`TapeNode`]s.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<TapeNode>,
    params: Vec<(String, Var)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, var: Var) -> &TapeNode {
        &self.nodes[var.0]
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(TapeNode {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable leaf that is not a named parameter (e.g. an input
    /// whose gradient is wanted).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn parameter(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.params.push((name.into(), v));
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(op, sa, sb));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Adds a bias vector to every row (the only broadcasting op).
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let out = tensor::add_bias(self.value(a), self.value(bias))?;
        let rg = self.needs(a) || self.needs(bias);
        Ok(self.push(out, Op::AddBias(a, bias), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Add, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Mul, a, b)
    }

    pub fn max(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Max, a, b)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Elementwise::Relu, a).expect("relu is total")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Elementwise::Sigmoid, a).expect("sigmoid is total")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Elementwise::Exp, a).expect("exp is total")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Elementwise::Log, a)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(Elementwise::Neg, a).expect("neg is total")
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(Elementwise::Abs, a).expect("abs is total")
    }

    /// Dispatches a binary elementwise op; shapes must match exactly.
    pub fn binary(&mut self, op: Elementwise, a: Var, b: Var) -> Result<Var> {
        let name = match op {
            Elementwise::Add => "add",
            Elementwise::Mul => "mul",
            Elementwise::Max => "max",
            other => {
                return Err(Error::Contract(alloc::format!(
                    "{other:?} is not a binary op"
                )))
            }
        };
        self.same_shape(name, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let (out, node) = match op {
            Elementwise::Add => (va.zip_map(vb, |x, y| x + y), Op::Add(a, b)),
            Elementwise::Mul => (va.zip_map(vb, |x, y| x * y), Op::Mul(a, b)),
            // ties keep the left operand
            _ => (va.zip_map(vb, |x, y| if y > x { y } else { x }), Op::Max(a, b)),
        };
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, node, rg))
    }

    /// Dispatches a unary elementwise op.
    pub fn unary(&mut self, op: Elementwise, a: Var) -> Result<Var> {
        let va = self.value(a);
        let (out, node) = match op {
            Elementwise::Relu => (va.map(tensor::relu), Op::Relu(a)),
            Elementwise::Sigmoid => (va.map(tensor::sigmoid), Op::Sigmoid(a)),
            Elementwise::Exp => (va.map(libm::exp), Op::Exp(a)),
            Elementwise::Log => {
                if let Some(&bad) = va.data().iter().find(|&&v| !(v > 0.0)) {
                    return Err(Error::Domain {
                        op: "log",
                        value: bad,
                    });
                }
                (va.map(libm::log), Op::Log(a))
            }
            Elementwise::Neg => (va.map(|v| -v), Op::Neg(a)),
            Elementwise::Abs => (va.map(libm::fabs), Op::Abs(a)),
            other => {
                return Err(Error::Contract(alloc::format!(
                    "{other:?} is not a unary op"
                )))
            }
        };
        let rg = self.needs(a);
        Ok(self.push(out, node, rg))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|v| v * factor);
        let rg = self.needs(a);
        self.push(out, Op::Scale(a, factor), rg)
    }

    /// `max(a, floor)`; gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let out = self.value(a).map(|v| if v < floor { floor } else { v });
        let rg = self.needs(a);
        self.push(out, Op::ClampMin(a, floor), rg)
    }

    /// Row-wise `softmax(a / temperature)` over the last axis.
    pub fn softmax(&mut self, a: Var, temperature: f64) -> Result<Var> {
        let out = tensor::softmax(self.value(a), temperature)?;
        let rg = self.needs(a);
        Ok(self.push(out, Op::Softmax(a, temperature), rg))
    }

    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(Reduction::Sum, a, axis)
    }

    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(Reduction::Mean, a, axis)
    }

    pub fn reduce_max(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(Reduction::Max, a, axis)
    }

    pub fn reduce(&mut self, op: Reduction, a: Var, axis: Option<usize>) -> Result<Var> {
        let va = self.value(a);
        let layout = ReduceLayout::new(va.shape(), axis)?;
        let mut out = vec![0.0; layout.outer * layout.inner];
        let mut picks = Vec::new();
        match op {
            Reduction::Sum | Reduction::Mean => {
                for (o, idx) in layout.groups() {
                    out[o] = idx.map(|i| va.data()[i]).sum();
                }
                if op == Reduction::Mean {
                    let n = layout.dim as f64;
                    out.iter_mut().for_each(|v| *v /= n);
                }
            }
            Reduction::Max => {
                picks = vec![0; out.len()];
                for (o, mut idx) in layout.groups() {
                    let first = idx.next().expect("non-empty axis");
                    let mut best = first;
                    for i in idx {
                        if va.data()[i] > va.data()[best] {
                            best = i;
                        }
                    }
                    out[o] = va.data()[best];
                    picks[o] = best;
                }
            }
        }
        let value = Tensor::new(layout.out_shape.clone(), out)?;
        let node = match op {
            Reduction::Sum => Op::Sum(a, axis),
            Reduction::Mean => Op::Mean(a, axis),
            Reduction::Max => Op::ReduceMax(a, picks),
        };
        let rg = self.needs(a);
        Ok(self.push(value, node, rg))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(Error::Contract(alloc::format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(root_value.shape(), 1.0));

        for id in (0..=root.0).rev() {
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            self.propagate(node, &upstream, &mut grads);
            grads[id] = Some(upstream);
        }

        Ok(Gradients {
            grads,
            params: self.params.clone(),
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &TapeNode, up: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut send = |target: Var, g: Tensor| {
            if !self.nodes[target.0].requires_grad {
                return;
            }
            match &mut grads[target.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                let (m, n) = (va.shape()[0], va.shape()[1]);
                let p = vb.shape()[1];
                if self.needs(a) {
                    let bt = tensor::transpose(vb.data(), n, p);
                    let mut da = vec![0.0; m * n];
                    tensor::matmul_acc(up.data(), &bt, &mut da, p, n);
                    send(a, Tensor::new(vec![m, n], da).expect("shape"));
                }
                if self.needs(b) {
                    let at = tensor::transpose(va.data(), m, n);
                    let mut db = vec![0.0; n * p];
                    tensor::matmul_acc(&at, up.data(), &mut db, m, p);
                    send(b, Tensor::new(vec![n, p], db).expect("shape"));
                }
            }
            &Op::AddBias(a, bias) => {
                if self.needs(bias) {
                    let w = up.last_dim();
                    let mut db = vec![0.0; w];
                    for row in up.data().chunks_exact(w) {
                        for (d, &g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    let shape = self.value(bias).shape().to_vec();
                    send(bias, Tensor::new(shape, db).expect("shape"));
                }
                send(a, up.clone());
            }
            &Op::Add(a, b) => {
                send(a, up.clone());
                send(b, up.clone());
            }
            &Op::Mul(a, b) => {
                if self.needs(a) {
                    send(a, up.zip_map(self.value(b), |g, y| g * y));
                }
                if self.needs(b) {
                    send(b, up.zip_map(self.value(a), |g, x| g * x));
                }
            }
            &Op::Max(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                // left operand wins ties, matching the forward pass
                let left: Vec<bool> = va
                    .data()
                    .iter()
                    .zip(vb.data())
                    .map(|(x, y)| !(y > x))
                    .collect();
                let route = |take_left: bool| {
                    let data = up
                        .data()
                        .iter()
                        .zip(&left)
                        .map(|(&g, &l)| if l == take_left { g } else { 0.0 })
                        .collect();
                    Tensor::new(up.shape().to_vec(), data).expect("shape")
                };
                if self.needs(a) {
                    send(a, route(true));
                }
                if self.needs(b) {
                    send(b, route(false));
                }
            }
            &Op::Scale(a, f) => send(a, up.map(|g| g * f)),
            &Op::Relu(a) => send(
                a,
                up.zip_map(self.value(a), |g, x| if x > 0.0 { g } else { 0.0 }),
            ),
            &Op::Sigmoid(a) => send(a, up.zip_map(out, |g, s| g * s * (1.0 - s))),
            &Op::Exp(a) => send(a, up.zip_map(out, |g, e| g * e)),
            &Op::Log(a) => send(a, up.zip_map(self.value(a), |g, x| g / x)),
            &Op::Neg(a) => send(a, up.map(|g| -g)),
            &Op::Abs(a) => send(
                a,
                up.zip_map(self.value(a), |g, x| {
                    if x > 0.0 {
                        g
                    } else if x < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                }),
            ),
            &Op::ClampMin(a, floor) => send(
                a,
                up.zip_map(self.value(a), |g, x| if x < floor { 0.0 } else { g }),
            ),
            &Op::Softmax(a, temperature) => {
                let w = out.last_dim();
                let mut da = up.clone();
                for (g_row, y_row) in da.data_mut().chunks_exact_mut(w).zip(out.data().chunks_exact(w)) {
                    let dot: f64 = g_row.iter().zip(y_row).map(|(g, y)| g * y).sum();
                    for (g, &y) in g_row.iter_mut().zip(y_row) {
                        *g = y * (*g - dot) / temperature;
                    }
                }
                send(a, da);
            }
            &Op::Sum(a, axis) | &Op::Mean(a, axis) => {
                let va = self.value(a);
                let layout = ReduceLayout::new(va.shape(), axis).expect("validated in forward");
                let scale = if matches!(node.op, Op::Mean(..)) {
                    1.0 / layout.dim as f64
                } else {
                    1.0
                };
                let mut da = vec![0.0; va.len()];
                for (o, idx) in layout.groups() {
                    let g = up.data()[o] * scale;
                    for i in idx {
                        da[i] = g;
                    }
                }
                send(a, Tensor::new(va.shape().to_vec(), da).expect("shape"));
            }
            Op::ReduceMax(a, picks) => {
                let va = self.value(*a);
                let mut da = vec![0.0; va.len()];
                for (o, &src) in picks.iter().enumerate() {
                    da[src] += up.data()[o];
                }
                send(*a, Tensor::new(va.shape().to_vec(), da).expect("shape"));
            }
        }
    }
}

/// Index bookkeeping for reducing one axis (or everything).
struct ReduceLayout {
    outer: usize,
    dim: usize,
    inner: usize,
    out_shape: Vec<usize>,
}

impl ReduceLayout {
    fn new(shape: &[usize], axis: Option<usize>) -> Result<Self> {
        match axis {
            None => Ok(Self {
                outer: 1,
                dim: shape.iter().product(),
                inner: 1,
                out_shape: Vec::new(),
            }),
            Some(ax) if ax < shape.len() => {
                let mut out_shape = shape.to_vec();
                out_shape.remove(ax);
                Ok(Self {
                    outer: shape[..ax].iter().product(),
                    dim: shape[ax],
                    inner: shape[ax + 1..].iter().product(),
                    out_shape,
                })
            }
            Some(ax) => Err(Error::Axis {
                axis: ax,
                shape: shape.to_vec(),
            }),
        }
    }

    /// Yields `(output index, source indices in axis order)`.
    fn groups(&self) -> impl Iterator<Item = (usize, impl Iterator<Item = usize>)> {
        let (outer, dim, inner) = (self.outer, self.dim, self.inner);
        (0..outer).flat_map(move |o| {
            (0..inner).map(move |i| {
                let base = o * dim * inner + i;
                (o * inner + i, (0..dim).map(move |j| base + j * inner))
            })
        })
    }
}

/// Identifies one scalar coordinate of a parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coordinate {
    pub parameter: String,
    pub index: usize,
}

/// Denominator floor of the relative error in [`finite_diff_check`].
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// One-sided slope gap (relative to `1 + |f|`) above which a coordinate is
/// re-probed at a tenth of the step to tell a kink from curvature.
const KINK_TRIGGER: f64 = 1e-8;

/// Outcome of [`finite_diff_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<Coordinate>,
    pub checked: usize,
    /// Coordinates sitting on a kink (one-sided slopes disagree); reported,
    /// not scored.
    pub excluded: Vec<Coordinate>,
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` receives a fresh graph plus one bound [`Var`] per parameter (in
/// `params` order) and must return a scalar. Relative error per coordinate is
/// `|a - n| / max(GRAD_CHECK_FLOOR, |a| + |n|)`, so gradients far below the
/// floor are judged on absolute error (central differences carry round-off
/// of order `|f|·ε/step`).
pub fn finite_diff_check<F>(params: &ParameterSet, step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::Parameter(alloc::format!("step must be positive, got {step}")));
    }
    let eval = |p: &ParameterSet| -> Result<f64> {
        let mut g = Graph::new();
        let vars = p.bind(&mut g);
        let root = f(&mut g, &vars)?;
        Ok(g.value(root).data()[0])
    };

    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let root = f(&mut g, &vars)?;
    let base = g.value(root).data()[0];
    let analytic = g.backward(root)?.parameters();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        excluded: Vec::new(),
    };
    let mut probe = params.clone();
    for (name, tensor) in params.iter() {
        let grad = analytic.get(name).expect("every parameter was bound");
        for idx in 0..tensor.len() {
            let original = tensor.data()[idx];
            probe.get_mut(name).expect("same names").data_mut()[idx] = original + step;
            let plus = eval(&probe)?;
            probe.get_mut(name).expect("same names").data_mut()[idx] = original - step;
            let minus = eval(&probe)?;
            probe.get_mut(name).expect("same names").data_mut()[idx] = original;

            let coord = Coordinate {
                parameter: name.to_string(),
                index: idx,
            };
            // Smooth: the one-sided slopes converge as the step shrinks.
            // Kink: their gap is the jump in slope and does not shrink.
            let gap = libm::fabs(plus - 2.0 * base + minus) / step;
            if gap > KINK_TRIGGER * (1.0 + libm::fabs(base)) {
                let small = step / 10.0;
                probe.get_mut(name).expect("same names").data_mut()[idx] = original + small;
                let plus_s = eval(&probe)?;
                probe.get_mut(name).expect("same names").data_mut()[idx] = original - small;
                let minus_s = eval(&probe)?;
                probe.get_mut(name).expect("same names").data_mut()[idx] = original;
                let gap_small = libm::fabs(plus_s - 2.0 * base + minus_s) / small;
                if gap_small > 0.5 * gap {
                    report.excluded.push(coord);
                    continue;
                }
            }
            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[idx];
            let denom = f64::max(GRAD_CHECK_FLOOR, libm::fabs(a) + libm::fabs(numeric));
            let rel = libm::fabs(a - numeric) / denom;
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some(coord);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_param(name: &str, data: &[f64]) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert(name, Tensor::vector(data.to_vec())).unwrap();
        p
    }

    #[test]
    fn elementwise_definitions() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let r = g.relu(a);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);

        let x = g.constant(Tensor::vector(vec![1.0, 5.0]));
        let y = g.constant(Tensor::vector(vec![4.0, 2.0]));
        let m = g.max(x, y).unwrap();
        assert_eq!(g.value(m).data(), &[4.0, 5.0]);

        let z = g.constant(Tensor::scalar(0.0));
        let s = g.sigmoid(z);
        assert_eq!(g.value(s).data(), &[0.5]);
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 0.0]));
        assert!(matches!(g.log(a), Err(Error::Domain { op: "log", .. })));
    }

    #[test]
    fn binary_shape_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(g.add(a, b), Err(Error::Dimension { .. })));
        assert!(matches!(g.mul(a, b), Err(Error::Dimension { .. })));
        assert!(g.unary(Elementwise::Add, a).is_err());
    }

    #[test]
    fn reductions() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let s = g.sum(a, None).unwrap();
        assert_eq!(g.value(s).data(), &[6.0]);
        let c = g.constant(Tensor::full(&[2, 3], 4.5));
        let m = g.mean(c, None).unwrap();
        assert_eq!(g.value(m).data(), &[4.5]);
        let rows = g.sum(c, Some(1)).unwrap();
        assert_eq!(g.value(rows).shape(), &[2]);
        assert_eq!(g.value(rows).data(), &[13.5, 13.5]);
        assert!(matches!(g.sum(c, Some(2)), Err(Error::Axis { axis: 2, .. })));
    }

    #[test]
    fn reduce_max_tie_routes_to_first() {
        let mut g = Graph::new();
        let a = g.input(Tensor::vector(vec![3.0, 1.0, 3.0]));
        let m = g.reduce_max(a, None).unwrap();
        let grads = g.backward(m).unwrap();
        assert_eq!(grads.wrt(a).data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.parameter("x", Tensor::vector(vec![3.0]));
        let sq = g.mul(x, x).unwrap();
        let root = g.sum(sq, None).unwrap();
        let grads = g.backward(root).unwrap().parameters();
        assert_eq!(grads.get("x").unwrap().data(), &[6.0]);
    }

    #[test]
    fn unreached_parameter_gets_zero() {
        let mut g = Graph::new();
        let x = g.parameter("x", Tensor::vector(vec![1.0, 2.0]));
        let _p = g.parameter("p", Tensor::vector(vec![7.0]));
        let root = g.sum(x, None).unwrap();
        let grads = g.backward(root).unwrap().parameters();
        assert_eq!(grads.get("p").unwrap().data(), &[0.0]);
        assert_eq!(grads.len(), 2);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::new();
        let x = g.parameter("x", Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.softmax(x, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(g.softmax(x, -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn softmax_of_two_logits() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![2.0, 0.0]));
        let s = g.softmax(x, 1.0).unwrap();
        // e^2 / (e^2 + 1) evaluated independently to 16 digits
        let expected = 0.880_797_077_977_882_3;
        approx::assert_abs_diff_eq!(g.value(s).data()[0], expected, epsilon = 1e-15);
        approx::assert_abs_diff_eq!(g.value(s).data()[1], 1.0 - expected, epsilon = 1e-15);
    }

    #[test]
    fn duplicate_parameter_names_rejected() {
        let mut p = vec_param("w", &[1.0]);
        assert!(p.insert("w", Tensor::scalar(2.0)).is_err());
    }

    #[test]
    fn linear_function_is_exact() {
        let params = vec_param("w", &[0.3, -1.2, 2.5]);
        let report = finite_diff_check(&params, 1e-6, |g, v| {
            let c = g.constant(Tensor::vector(vec![2.0, -1.0, 0.5]));
            let prod = g.mul(v[0], c)?;
            g.sum(prod, None)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-10, "{report:?}");
        assert_eq!(report.checked, 3);
    }

    #[test]
    fn relu_kink_is_excluded_not_failed() {
        let params = vec_param("w", &[0.0, 1.5]);
        let report = finite_diff_check(&params, 1e-6, |g, v| {
            let r = g.relu(v[0]);
            g.sum(r, None)
        })
        .unwrap();
        assert_eq!(
            report.excluded,
            vec![Coordinate {
                parameter: "w".into(),
                index: 0
            }]
        );
        assert_eq!(report.checked, 1);
        assert!(report.max_rel_error < 1e-8);
    }

    #[test]
    fn small_kinks_excluded_but_curvature_kept() {
        // 1e-4·relu(w) + 5·w²: a tiny slope jump at 0, curvature of similar size at 0.7
        let params = vec_param("w", &[0.0, 0.7]);
        let report = finite_diff_check(&params, 1e-5, |g, v| {
            let r = g.relu(v[0]);
            let r = g.scale(r, 1e-4);
            let sq = g.mul(v[0], v[0])?;
            let sq = g.scale(sq, 5.0);
            let s = g.add(r, sq)?;
            g.sum(s, None)
        })
        .unwrap();
        assert_eq!(report.excluded.len(), 1);
        assert_eq!(report.excluded[0].index, 0);
        assert_eq!(report.checked, 1);
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn matmul_gradient_is_ones_times_b_transpose() {
        let a: alloc::vec::Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: alloc::vec::Vec<f64> = (0..8).map(|i| (i as f64 * 0.91).cos()).collect();
        let mut g = Graph::new();
        let va = g.parameter("a", Tensor::matrix(3, 4, a).unwrap());
        let vb = g.constant(Tensor::matrix(4, 2, b.clone()).unwrap());
        let prod = g.matmul(va, vb).unwrap();
        let root = g.sum(prod, None).unwrap();
        let grad = g.backward(root).unwrap().wrt(va);
        for i in 0..3 {
            for j in 0..4 {
                let expected = b[j * 2] + b[j * 2 + 1];
                approx::assert_abs_diff_eq!(grad.data()[i * 4 + j], expected, epsilon = 1e-14);
            }
        }
    }
}
