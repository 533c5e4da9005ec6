//! Reverse-mode differentiation over whole tensor fields.
//!
//! A [`Tape`] records one forward evaluation. Nodes hold complete
//! [`TensorField`]s or flat vectors, and every layer contributes a single node
//! whose adjoint is its closed-form vector-Jacobian product from
//! [`crate::layers`]. Parameter leaves carry their offset in the flat
//! parameter vector so that [`Tape::backward`] can return a gradient aligned
//! with it.
//!
//! ```
//! use uninet::autodiff::Tape;
//!
//! let theta = [2.0];
//! let mut tape = Tape::new(1);
//! let gamma = tape.param(&theta, 0..1);
//! let x = tape.constant_vector(vec![3.0]);
//! let prod = tape.mul(gamma, x).unwrap();
//! let loss = tape.sum(prod).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.params(), &[3.0]);
//! ```

use std::ops::Range;

use crate::error::{Error, Result};
use crate::field::{PointCloud, TensorField};
use crate::layers::{self, AscendParams, DescendParams, KnnGraph, LinearParams, T2MixParams, VnReluParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Field(TensorField),
    Vector(Vec<f64>),
}

impl Value {
    /// Number of scalar entries.
    pub fn len(&self) -> usize {
        match self {
            Value::Field(f) => f.data().len(),
            Value::Vector(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entries in storage order.
    pub fn data(&self) -> &[f64] {
        match self {
            Value::Field(f) => f.data(),
            Value::Vector(v) => v,
        }
    }

    fn data_mut(&mut self) -> &mut [f64] {
        match self {
            Value::Field(f) => f.data_mut(),
            Value::Vector(v) => v,
        }
    }

    fn zeros_like(&self) -> Self {
        match self {
            Value::Field(f) => Value::Field(TensorField::zeros(f.n(), f.channels(), f.order())),
            Value::Vector(v) => Value::Vector(vec![0.0; v.len()]),
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param { offset: usize },
    Ascend { v: NodeId, x: NodeId, p: NodeId, graph: Option<KnnGraph> },
    Descend { v: NodeId, p: NodeId },
    Linear { v: NodeId, p: NodeId, c_out: usize },
    Concat { a: NodeId, b: NodeId },
    T2Mix { v: NodeId, p: NodeId },
    VnRelu { v: NodeId, p: NodeId },
    SumPool { v: NodeId },
    Dense { x: NodeId, w: NodeId, b: NodeId },
    Relu { x: NodeId },
    Mul { a: NodeId, b: NodeId },
    Sum { x: NodeId },
    Inner { x: NodeId, weights: Vec<f64> },
    CrossEntropy { logits: NodeId, label: usize },
    Mse { pred: NodeId, target: Vec<f64> },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf | Op::Param { .. } => vec![],
            Op::Ascend { v, x, p, .. } => vec![*v, *x, *p],
            Op::Descend { v, p } | Op::Linear { v, p, .. } | Op::T2Mix { v, p } | Op::VnRelu { v, p } => {
                vec![*v, *p]
            }
            Op::Concat { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::SumPool { v } => vec![*v],
            Op::Dense { x, w, b } => vec![*x, *w, *b],
            Op::Relu { x } | Op::Sum { x } | Op::Inner { x, .. } => vec![*x],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::Mse { pred, .. } => vec![*pred],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Value,
    op: Op,
}

/// Append-only record of one forward evaluation.
#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    param_len: usize,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<Option<Value>>,
    params: Vec<f64>,
}

impl Gradients {
    /// Gradient with respect to the flat parameter vector; zero where no path
    /// reaches the loss.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn into_params(self) -> Vec<f64> {
        self.params
    }

    pub fn field(&self, id: NodeId) -> Option<&TensorField> {
        match self.adjoints.get(id.0)? {
            Some(Value::Field(f)) => Some(f),
            _ => None,
        }
    }

    pub fn vector(&self, id: NodeId) -> Option<&[f64]> {
        match self.adjoints.get(id.0)? {
            Some(Value::Vector(v)) => Some(v),
            _ => None,
        }
    }
}

impl Tape {
    /// A tape whose parameter gradients have `param_len` entries.
    pub fn new(param_len: usize) -> Self {
        Self { nodes: Vec::new(), param_len }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Value, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Value {
        &self.nodes[id.0].value
    }

    pub fn field(&self, id: NodeId) -> Result<&TensorField> {
        match self.value(id) {
            Value::Field(f) => Ok(f),
            Value::Vector(_) => Err(Error::Shape(format!("node {} holds a vector, not a field", id.0))),
        }
    }

    pub fn vector(&self, id: NodeId) -> Result<&[f64]> {
        match self.value(id) {
            Value::Vector(v) => Ok(v),
            Value::Field(_) => Err(Error::Shape(format!("node {} holds a field, not a vector", id.0))),
        }
    }

    /// A leaf reading `theta[range]`; its adjoint lands in the same range of
    /// the parameter gradient.
    pub fn param(&mut self, theta: &[f64], range: Range<usize>) -> NodeId {
        assert!(range.end <= self.param_len, "parameter range exceeds the tape's parameter length");
        let offset = range.start;
        self.push(Value::Vector(theta[range].to_vec()), Op::Param { offset })
    }

    pub fn constant_field(&mut self, f: TensorField) -> NodeId {
        self.push(Value::Field(f), Op::Leaf)
    }

    pub fn constant_vector(&mut self, v: Vec<f64>) -> NodeId {
        self.push(Value::Vector(v), Op::Leaf)
    }

    /// The cloud as an order-1 single-channel field leaf; query its adjoint
    /// with [`Gradients::field`].
    pub fn cloud(&mut self, x: &PointCloud) -> NodeId {
        self.constant_field(x.to_field())
    }

    pub fn ascend(&mut self, v: NodeId, x: NodeId, p: NodeId, graph: Option<KnnGraph>) -> Result<NodeId> {
        let vf = self.field(v)?;
        let cloud = PointCloud::from_field(self.field(x)?)?;
        let params = self.ascend_params(vf.channels(), p)?;
        let out = layers::ascend(vf, &cloud, &params, graph.as_ref())?;
        Ok(self.push(Value::Field(out), Op::Ascend { v, x, p, graph }))
    }

    fn ascend_params(&self, channels: usize, p: NodeId) -> Result<AscendParams> {
        let flat = self.vector(p)?;
        let knn = flat.len() == AscendParams::flat_len(channels, true);
        AscendParams::from_flat(channels, knn, flat)
    }

    pub fn descend(&mut self, v: NodeId, p: NodeId) -> Result<NodeId> {
        let vf = self.field(v)?;
        let params = DescendParams::new(vf.order(), vf.channels(), self.vector(p)?.to_vec())?;
        let out = layers::descend(vf, &params)?;
        Ok(self.push(Value::Field(out), Op::Descend { v, p }))
    }

    pub fn linear(&mut self, v: NodeId, p: NodeId, c_out: usize) -> Result<NodeId> {
        let vf = self.field(v)?;
        let params = LinearParams::new(vf.channels(), c_out, self.vector(p)?.to_vec())?;
        let out = layers::channel_linear(vf, &params)?;
        Ok(self.push(Value::Field(out), Op::Linear { v, p, c_out }))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.field(a)?.concat(self.field(b)?)?;
        Ok(self.push(Value::Field(out), Op::Concat { a, b }))
    }

    pub fn t2_mix(&mut self, v: NodeId, p: NodeId) -> Result<NodeId> {
        let params = T2MixParams::from_flat(self.vector(p)?)?;
        let out = layers::t2_mix(self.field(v)?, &params)?;
        Ok(self.push(Value::Field(out), Op::T2Mix { v, p }))
    }

    pub fn vn_relu(&mut self, v: NodeId, p: NodeId) -> Result<NodeId> {
        let vf = self.field(v)?;
        let params = VnReluParams::new(vf.channels(), self.vector(p)?.to_vec())?;
        let out = layers::vn_relu(vf, &params)?;
        Ok(self.push(Value::Field(out), Op::VnRelu { v, p }))
    }

    /// Sum over points of an order-0 field: one value per channel.
    pub fn sum_pool(&mut self, v: NodeId) -> Result<NodeId> {
        let out = crate::network::sum_pool(self.field(v)?)?;
        Ok(self.push(Value::Vector(out), Op::SumPool { v }))
    }

    /// `W x + b` with `W` row-major `out x in`.
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, wv, bv) = (self.vector(x)?, self.vector(w)?, self.vector(b)?);
        if bv.is_empty() || wv.len() != bv.len() * xv.len() {
            return Err(Error::Shape(format!(
                "dense layer: {} weights for {} inputs and {} outputs",
                wv.len(),
                xv.len(),
                bv.len()
            )));
        }
        let out = dense_forward(xv, wv, bv);
        Ok(self.push(Value::Vector(out), Op::Dense { x, w, b }))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.vector(x)?.iter().map(|&v| v.max(0.0)).collect();
        Ok(self.push(Value::Vector(out), Op::Relu { x }))
    }

    /// Elementwise product of two equal-length vectors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.vector(a)?, self.vector(b)?);
        if av.len() != bv.len() {
            return Err(Error::Shape(format!("mul of lengths {} and {}", av.len(), bv.len())));
        }
        let out = av.iter().zip(bv).map(|(x, y)| x * y).collect();
        Ok(self.push(Value::Vector(out), Op::Mul { a, b }))
    }

    /// Sum of all entries of a vector or field, as a length-1 vector.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).data().iter().sum();
        Ok(self.push(Value::Vector(vec![s]), Op::Sum { x }))
    }

    /// `sum_i w_i x_i` over all entries of a vector or field, for fixed weights.
    pub fn inner(&mut self, x: NodeId, weights: Vec<f64>) -> Result<NodeId> {
        let data = self.value(x).data();
        if data.len() != weights.len() {
            return Err(Error::Shape(format!("{} weights for {} entries", weights.len(), data.len())));
        }
        let s = data.iter().zip(&weights).map(|(a, b)| a * b).sum();
        Ok(self.push(Value::Vector(vec![s]), Op::Inner { x, weights }))
    }

    /// Softmax cross-entropy of `logits` against class `label`.
    pub fn cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let l = self.vector(logits)?;
        if label >= l.len() {
            return Err(Error::Shape(format!("label {label} out of range for {} logits", l.len())));
        }
        let loss = cross_entropy_value(l, label);
        Ok(self.push(Value::Vector(vec![loss]), Op::CrossEntropy { logits, label }))
    }

    /// Mean squared error against a fixed target.
    pub fn mse(&mut self, pred: NodeId, target: Vec<f64>) -> Result<NodeId> {
        let p = self.vector(pred)?;
        if p.len() != target.len() || p.is_empty() {
            return Err(Error::Shape(format!("mse of lengths {} and {}", p.len(), target.len())));
        }
        let loss = p.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
        Ok(self.push(Value::Vector(vec![loss]), Op::Mse { pred, target }))
    }

    /// Propagates adjoints from a scalar `loss` node back to every node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        match self.value(loss) {
            Value::Vector(v) if v.len() == 1 => {}
            _ => return Err(Error::Shape("backward needs a scalar loss node".into())),
        }
        let mut adjoints: Vec<Option<Value>> = vec![None; self.nodes.len()];
        let mut params = vec![0.0; self.param_len];
        adjoints[loss.0] = Some(Value::Vector(vec![1.0]));

        for id in (0..=loss.0).rev() {
            let Some(g) = adjoints[id].take() else { continue };
            let node = &self.nodes[id];
            for input in node.op.inputs() {
                // append-only construction makes this unreachable; checked so a
                // corrupted tape cannot loop
                if input.0 >= id {
                    return Err(Error::Shape(format!("tape cycle: node {id} reads node {}", input.0)));
                }
            }
            let contributions = self.node_vjp(node, &g)?;
            if let Op::Param { offset } = node.op {
                for (p, x) in params[offset..offset + g.len()].iter_mut().zip(g.data()) {
                    *p += x;
                }
            }
            for (input, adj) in contributions {
                accumulate(&mut adjoints[input.0], &self.nodes[input.0].value, adj)?;
            }
            adjoints[id] = Some(g);
        }
        Ok(Gradients { adjoints, params })
    }

    fn node_vjp(&self, node: &Node, g: &Value) -> Result<Vec<(NodeId, Value)>> {
        let gf = || match g {
            Value::Field(f) => Ok(f),
            Value::Vector(_) => Err(Error::Shape("expected a field adjoint".into())),
        };
        let gv = g.data();
        Ok(match &node.op {
            Op::Leaf | Op::Param { .. } => vec![],
            Op::Ascend { v, x, p, graph } => {
                let vf = self.field(*v)?;
                let cloud = PointCloud::from_field(self.field(*x)?)?;
                let params = self.ascend_params(vf.channels(), *p)?;
                let (dv, dx, dp) = layers::ascend_vjp(vf, &cloud, &params, graph.as_ref(), gf()?)?;
                let dx = TensorField::from_data(cloud.len(), 1, 1, dx)?;
                vec![(*v, Value::Field(dv)), (*x, Value::Field(dx)), (*p, Value::Vector(dp))]
            }
            Op::Descend { v, p } => {
                let vf = self.field(*v)?;
                let params = DescendParams::new(vf.order(), vf.channels(), self.vector(*p)?.to_vec())?;
                let (dv, dp) = layers::descend_vjp(vf, &params, gf()?)?;
                vec![(*v, Value::Field(dv)), (*p, Value::Vector(dp))]
            }
            Op::Linear { v, p, c_out } => {
                let vf = self.field(*v)?;
                let params = LinearParams::new(vf.channels(), *c_out, self.vector(*p)?.to_vec())?;
                let (dv, dp) = layers::channel_linear_vjp(vf, &params, gf()?)?;
                vec![(*v, Value::Field(dv)), (*p, Value::Vector(dp))]
            }
            Op::Concat { a, b } => {
                let left = self.field(*a)?.channels();
                let (ga, gb) = gf()?.split_channels(left);
                vec![(*a, Value::Field(ga)), (*b, Value::Field(gb))]
            }
            Op::T2Mix { v, p } => {
                let params = T2MixParams::from_flat(self.vector(*p)?)?;
                let (dv, dp) = layers::t2_mix_vjp(self.field(*v)?, &params, gf()?)?;
                vec![(*v, Value::Field(dv)), (*p, Value::Vector(dp))]
            }
            Op::VnRelu { v, p } => {
                let vf = self.field(*v)?;
                let params = VnReluParams::new(vf.channels(), self.vector(*p)?.to_vec())?;
                let (dv, dp) = layers::vn_relu_vjp(vf, &params, gf()?)?;
                vec![(*v, Value::Field(dv)), (*p, Value::Vector(dp))]
            }
            Op::SumPool { v } => {
                let vf = self.field(*v)?;
                let mut dv = TensorField::zeros(vf.n(), vf.channels(), 0);
                for j in 0..vf.n() {
                    dv.data_mut()[j * vf.channels()..(j + 1) * vf.channels()].copy_from_slice(gv);
                }
                vec![(*v, Value::Field(dv))]
            }
            Op::Dense { x, w, b } => {
                let (xv, wv) = (self.vector(*x)?, self.vector(*w)?);
                let n_in = xv.len();
                let mut dx = vec![0.0; n_in];
                let mut dw = vec![0.0; wv.len()];
                for (o, &go) in gv.iter().enumerate() {
                    let row = &wv[o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        dx[i] += row[i] * go;
                        dw[o * n_in + i] = go * xv[i];
                    }
                }
                vec![(*x, Value::Vector(dx)), (*w, Value::Vector(dw)), (*b, Value::Vector(gv.to_vec()))]
            }
            Op::Relu { x } => {
                let xv = self.vector(*x)?;
                let dx = xv.iter().zip(gv).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect();
                vec![(*x, Value::Vector(dx))]
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.vector(*a)?, self.vector(*b)?);
                let da = bv.iter().zip(gv).map(|(y, g)| y * g).collect();
                let db = av.iter().zip(gv).map(|(y, g)| y * g).collect();
                vec![(*a, Value::Vector(da)), (*b, Value::Vector(db))]
            }
            Op::Sum { x } => {
                let mut dx = self.value(*x).zeros_like();
                dx.data_mut().iter_mut().for_each(|d| *d = gv[0]);
                vec![(*x, dx)]
            }
            Op::Inner { x, weights } => {
                let mut dx = self.value(*x).zeros_like();
                dx.data_mut().iter_mut().zip(weights).for_each(|(d, w)| *d = gv[0] * w);
                vec![(*x, dx)]
            }
            Op::CrossEntropy { logits, label } => {
                let mut probs = softmax(self.vector(*logits)?);
                // p_y - 1 = -sum of the other probabilities, without cancellation
                let rest: f64 = probs.iter().enumerate().filter(|&(i, _)| i != *label).map(|(_, p)| p).sum();
                probs[*label] = -rest;
                probs.iter_mut().for_each(|p| *p *= gv[0]);
                vec![(*logits, Value::Vector(probs))]
            }
            Op::Mse { pred, target } => {
                let p = self.vector(*pred)?;
                let scale = 2.0 * gv[0] / p.len() as f64;
                let dp = p.iter().zip(target).map(|(a, b)| scale * (a - b)).collect();
                vec![(*pred, Value::Vector(dp))]
            }
        })
    }
}

fn accumulate(slot: &mut Option<Value>, value: &Value, adj: Value) -> Result<()> {
    if adj.len() != value.len() {
        return Err(Error::Shape(format!("adjoint of length {} for a value of length {}", adj.len(), value.len())));
    }
    match slot {
        None => *slot = Some(adj),
        Some(existing) => {
            for (e, a) in existing.data_mut().iter_mut().zip(adj.data()) {
                *e += a;
            }
        }
    }
    Ok(())
}

pub(crate) fn dense_forward(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bo)| bo + w[o * n_in..(o + 1) * n_in].iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

/// `log_sum_exp(x) - x[label]`, accurate also when the loss is tiny.
pub fn cross_entropy_value(x: &[f64], label: usize) -> f64 {
    let top = (0..x.len()).fold(0, |b, i| if x[i] > x[b] { i } else { b });
    let m = x[top];
    let rest: f64 = x.iter().enumerate().filter(|&(i, _)| i != top).map(|(_, v)| (v - m).exp()).sum();
    (m - x[label]) + rest.ln_1p()
}

pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(x);
    x.iter().map(|v| (v - lse).exp()).collect()
}

/// Largest per-coordinate relative error between `analytic` and central
/// differences of `f` around `theta`, with denominator
/// `max(1e-8, |analytic| + |numeric|)`.
pub fn finite_diff_check(
    f: impl Fn(&[f64]) -> Result<f64>,
    theta: &[f64],
    analytic: &[f64],
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("finite difference step must be positive, got {eps}")));
    }
    if analytic.len() != theta.len() {
        return Err(Error::Shape(format!("{} gradient entries for {} parameters", analytic.len(), theta.len())));
    }
    let mut probe = theta.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        probe[i] = theta[i] + eps;
        let up = f(&probe)?;
        probe[i] = theta[i] - eps;
        let down = f(&probe)?;
        probe[i] = theta[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("objective at coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * eps);
        let denom = (analytic[i].abs() + numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Learning rate, step count and (for Adam) moment buffers aligned with the
/// flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub step: u64,
    first_moment: Option<Vec<f64>>,
    second_moment: Option<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, param_len: usize) -> Self {
        let moments = (kind == OptimizerKind::Adam).then(|| vec![0.0; param_len]);
        Self { kind, lr, step: 0, first_moment: moments.clone(), second_moment: moments }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr, 0)
    }

    pub fn adam(lr: f64, param_len: usize) -> Self {
        Self::new(OptimizerKind::Adam, lr, param_len)
    }

    pub fn apply(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        match self.kind {
            OptimizerKind::Sgd => sgd_step(theta, grad, self),
            OptimizerKind::Adam => adam_step(theta, grad, self),
        }
    }
}

fn check_step(theta: &[f64], grad: &[f64]) -> Result<()> {
    if theta.len() != grad.len() {
        return Err(Error::Shape(format!("{} gradient entries for {} parameters", grad.len(), theta.len())));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i} is {}", grad[i])));
    }
    Ok(())
}

/// `theta <- theta - lr * grad`.
pub fn sgd_step(theta: &mut [f64], grad: &[f64], state: &mut OptimizerState) -> Result<()> {
    check_step(theta, grad)?;
    for (t, g) in theta.iter_mut().zip(grad) {
        *t -= state.lr * g;
    }
    state.step += 1;
    Ok(())
}

/// Bias-corrected Adam.
pub fn adam_step(theta: &mut [f64], grad: &[f64], state: &mut OptimizerState) -> Result<()> {
    check_step(theta, grad)?;
    let n = theta.len();
    let m = state.first_moment.get_or_insert_with(|| vec![0.0; n]);
    if m.len() != n {
        return Err(Error::Shape(format!("optimizer state sized for {} parameters, got {n}", m.len())));
    }
    let v = state.second_moment.get_or_insert_with(|| vec![0.0; n]);
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let m = state.first_moment.as_mut().expect("initialised above");
    for i in 0..n {
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad[i];
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
    }
    for i in 0..n {
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        theta[i] -= state.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_product_gradient() {
        let theta = [5.0];
        let mut tape = Tape::new(1);
        let gamma = tape.param(&theta, 0..1);
        let x = tape.constant_vector(vec![3.0]);
        let y = tape.mul(gamma, x).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.params(), &[3.0]);
        assert_eq!(grads.vector(x).unwrap(), &[5.0]);
    }

    #[test]
    fn unused_parameters_get_zero() {
        let theta = [1.0, 2.0, 3.0];
        let mut tape = Tape::new(3);
        let a = tape.param(&theta, 0..1);
        let _unused = tape.param(&theta, 1..3);
        let loss = tape.sum(a).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.params(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new(0);
        let v = tape.constant_vector(vec![1.0, 2.0]);
        assert!(tape.backward(v).is_err());
    }

    #[test]
    fn dense_relu_cross_entropy_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (n_in, hidden, out) = (4, 5, 3);
        let len = hidden * n_in + hidden + out * hidden + out;
        let theta: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..n_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        let record = |theta: &[f64]| -> Result<(Tape, NodeId)> {
            let mut tape = Tape::new(len);
            let xin = tape.constant_vector(x.clone());
            let mut o = 0;
            let mut blk = |tape: &mut Tape, l: usize| {
                let id = tape.param(theta, o..o + l);
                o += l;
                id
            };
            let w1 = blk(&mut tape, hidden * n_in);
            let b1 = blk(&mut tape, hidden);
            let w2 = blk(&mut tape, out * hidden);
            let b2 = blk(&mut tape, out);
            let h = tape.dense(xin, w1, b1)?;
            let h = tape.relu(h)?;
            let logits = tape.dense(h, w2, b2)?;
            let loss = tape.cross_entropy(logits, 2)?;
            Ok((tape, loss))
        };
        let (tape, loss) = record(&theta).unwrap();
        let grads = tape.backward(loss).unwrap();
        let f = |t: &[f64]| {
            let (tape, loss) = record(t)?;
            Ok(tape.vector(loss)?[0])
        };
        let err = finite_diff_check(f, &theta, grads.params(), 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn finite_diff_quadratic_and_constant() {
        let theta = [0.3, -1.2, 2.5];
        let grad: Vec<f64> = theta.iter().map(|t| 2.0 * t).collect();
        let err = finite_diff_check(|t| Ok(t.iter().map(|x| x * x).sum()), &theta, &grad, 1e-5).unwrap();
        assert!(err <= 1e-9, "{err}");
        let err = finite_diff_check(|_| Ok(4.0), &theta, &[0.0; 3], 1e-5).unwrap();
        assert!(err <= 1e-8);
        assert!(finite_diff_check(|_| Ok(f64::NAN), &theta, &[0.0; 3], 1e-5).is_err());
        assert!(finite_diff_check(|_| Ok(0.0), &theta, &[0.0; 3], 0.0).is_err());
    }

    #[test]
    fn sgd_examples() {
        let mut theta = [1.0];
        let mut state = OptimizerState::sgd(0.1);
        sgd_step(&mut theta, &[1.0], &mut state).unwrap();
        assert_eq!(theta, [0.9]);
        assert_eq!(state.step, 1);
        let mut theta = [0.7, -0.2];
        sgd_step(&mut theta, &[0.0, 0.0], &mut state).unwrap();
        assert_eq!(theta, [0.7, -0.2]);
        assert!(sgd_step(&mut theta, &[f64::NAN, 0.0], &mut state).is_err());
    }

    #[test]
    fn adam_first_step_by_hand() {
        let lr = 0.01;
        let g = [0.5, -2.0, 0.0];
        let mut theta = [1.0, 1.0, 1.0];
        let mut state = OptimizerState::adam(lr, 3);
        adam_step(&mut theta, &g, &mut state).unwrap();
        // m_hat = g, v_hat = g^2 after bias correction
        for i in 0..3 {
            let expected = 1.0 - lr * g[i] / (g[i].abs() + ADAM_EPS);
            assert!((theta[i] - expected).abs() < 1e-15, "{i}: {} vs {expected}", theta[i]);
        }
        assert_eq!(state.step, 1);
    }
}
