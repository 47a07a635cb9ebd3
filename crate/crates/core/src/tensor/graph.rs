//! Computation record: eager forward evaluation plus reverse-mode backward.
//!
//! Every primitive application appends one node holding its operation, its
//! cached output, and a derived requires-grad flag. Insertion order is the
//! topological order, so the backward pass is a single reverse sweep with a
//! fixed accumulation order.

use super::{Result, Tensor, TensorError};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    MatMul {
        a: NodeId,
        b: NodeId,
        trans_a: bool,
        trans_b: bool,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        stride: usize,
        pad: usize,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Div {
        a: NodeId,
        b: NodeId,
    },
    Relu {
        x: NodeId,
    },
    GlobalAvgPool {
        x: NodeId,
    },
    RowL2Normalize {
        x: NodeId,
    },
    Softmax {
        x: NodeId,
        temperature: f64,
        log: bool,
    },
    Concat {
        inputs: Vec<NodeId>,
        axis: usize,
    },
    Reshape {
        x: NodeId,
        shape: Vec<usize>,
    },
    Reduce {
        x: NodeId,
        axes: Vec<usize>,
        mean: bool,
        keep_dims: bool,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::MatMul { .. } => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Div { .. } => "div",
            Op::Relu { .. } => "relu",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::RowL2Normalize { .. } => "row_l2_normalize",
            Op::Softmax { log: false, .. } => "softmax",
            Op::Softmax { log: true, .. } => "log_softmax",
            Op::Concat { .. } => "concat",
            Op::Reshape { .. } => "reshape",
            Op::Reduce { mean: false, .. } => "reduce_sum",
            Op::Reduce { mean: true, .. } => "reduce_mean",
        }
    }

    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Input => vec![],
            Op::MatMul { a, b, .. } | Op::Add { a, b } | Op::Mul { a, b } | Op::Div { a, b } => {
                vec![*a, *b]
            }
            Op::Conv2d { x, w, .. } => vec![*x, *w],
            Op::Relu { x }
            | Op::GlobalAvgPool { x }
            | Op::RowL2Normalize { x }
            | Op::Softmax { x, .. }
            | Op::Reshape { x, .. }
            | Op::Reduce { x, .. } => vec![*x],
            Op::Concat { inputs, .. } => inputs.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    name: Option<String>,
}

/// Gradients for the requires-grad inputs of one backward pass, keyed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the seeded output with respect to the given input node.
    /// `None` for nodes that are not requires-grad inputs.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

/// The computation record: primitives in topological order with cached
/// outputs. Single-owner; one backward pass consumes it.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

// Threshold below which a row is left unnormalized (and treated as
// pass-through in the backward pass).
const ROW_NORM_EPS: f64 = 1e-12;

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

    /// Cached output of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Register a named input leaf. Gradient tracking follows the tensor's
    /// requires-grad flag.
    pub fn input(&mut self, name: &str, tensor: Tensor) -> NodeId {
        let requires_grad = tensor.wants_grad();
        self.push_node(Op::Input, tensor, requires_grad, Some(name.to_string()))
    }

    /// Register an unnamed constant leaf (never differentiated).
    pub fn constant(&mut self, tensor: Tensor) -> NodeId {
        self.push_node(Op::Input, tensor, false, None)
    }

    fn push_node(
        &mut self,
        op: Op,
        value: Tensor,
        requires_grad: bool,
        name: Option<String>,
    ) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            name,
        });
        id
    }

    fn apply(&mut self, op: Op) -> Result<NodeId> {
        let value = eval_op(&op, &self.nodes, self.nodes.len())?;
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push_node(op, value, requires_grad, None))
    }

    // ── Primitives ──────────────────────────────────────────────────

    /// 2-D matrix product with optional operand transposes.
    pub fn matmul_t(
        &mut self,
        a: NodeId,
        b: NodeId,
        trans_a: bool,
        trans_b: bool,
    ) -> Result<NodeId> {
        self.apply(Op::MatMul {
            a,
            b,
            trans_a,
            trans_b,
        })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_t(a, b, false, false)
    }

    /// Direct 2-D convolution: input `b×ci×h×w`, kernel `co×ci×kh×kw`,
    /// symmetric zero padding.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        self.apply(Op::Conv2d { x, w, stride, pad })
    }

    /// Elementwise addition with standard trailing-axis broadcasting.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Add { a, b })
    }

    /// Elementwise product with standard trailing-axis broadcasting.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Mul { a, b })
    }

    /// Elementwise quotient with standard trailing-axis broadcasting.
    /// Division by zero surfaces as a non-finite-value error.
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Div { a, b })
    }

    /// Rectified linear unit. The subgradient at exactly 0 is 0.
    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Relu { x })
    }

    /// Per-channel spatial mean: `b×c×h×w` → `b×c`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::GlobalAvgPool { x })
    }

    /// Divide each row of a 2-D tensor by its L2 norm. Rows with norm below
    /// 1e-12 pass through unchanged.
    pub fn row_l2_normalize(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::RowL2Normalize { x })
    }

    /// Row-wise temperature softmax over the last axis of a 2-D tensor.
    pub fn softmax(&mut self, x: NodeId, temperature: f64) -> Result<NodeId> {
        self.apply(Op::Softmax {
            x,
            temperature,
            log: false,
        })
    }

    /// Row-wise temperature log-softmax over the last axis of a 2-D tensor.
    pub fn log_softmax(&mut self, x: NodeId, temperature: f64) -> Result<NodeId> {
        self.apply(Op::Softmax {
            x,
            temperature,
            log: true,
        })
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        self.apply(Op::Concat {
            inputs: inputs.to_vec(),
            axis,
        })
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.apply(Op::Reshape {
            x,
            shape: shape.to_vec(),
        })
    }

    /// Sum over the given axes (dropping them unless `keep_dims`).
    pub fn reduce_sum(&mut self, x: NodeId, axes: &[usize], keep_dims: bool) -> Result<NodeId> {
        self.apply(Op::Reduce {
            x,
            axes: axes.to_vec(),
            mean: false,
            keep_dims,
        })
    }

    /// Mean over the given axes (dropping them unless `keep_dims`).
    pub fn reduce_mean(&mut self, x: NodeId, axes: &[usize], keep_dims: bool) -> Result<NodeId> {
        self.apply(Op::Reduce {
            x,
            axes: axes.to_vec(),
            mean: true,
            keep_dims,
        })
    }

    // ── Composite helpers (built from the primitives above) ─────────

    /// Sum of every element, as a scalar node.
    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.reduce_sum(x, &axes, false)
    }

    /// Mean of every element, as a scalar node.
    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.reduce_mean(x, &axes, false)
    }

    /// Multiply by a scalar constant.
    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        let c = self.constant(Tensor::scalar(factor));
        self.mul(x, c)
    }

    /// `a - b`, expressed as `a + (-1)·b`.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.mul(x, x)
    }

    /// 2×2 average pooling of `b×c×h×w` (h, w even), via reshape + mean.
    pub fn avg_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 || shape[2] % 2 != 0 || shape[3] % 2 != 0 {
            return Err(TensorError::ShapeMismatch {
                op: "avg_pool2",
                detail: format!("expected b×c×h×w with even h, w, got {shape:?}"),
            });
        }
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let blocked = self.reshape(x, &[b, c, h / 2, 2, w / 2, 2])?;
        self.reduce_mean(blocked, &[3, 5], false)
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse sweep seeded with all-ones over a scalar output.
    pub fn backward_scalar(&mut self, output: NodeId) -> Result<Gradients> {
        let seed = Tensor::from_parts(self.shape(output).to_vec(), vec![1.0]);
        if !self.value(output).is_scalar() {
            return Err(TensorError::NonScalarOutput(self.shape(output).to_vec()));
        }
        self.backward(output, &seed)
    }

    /// Reverse-mode differentiation of `output` seeded with `seed`.
    /// Consumes the record; a second call errors.
    pub fn backward(&mut self, output: NodeId, seed: &Tensor) -> Result<Gradients> {
        if self.consumed {
            return Err(TensorError::RecordConsumed);
        }
        self.consumed = true;
        if seed.shape() != self.shape(output) {
            return Err(TensorError::SeedShapeMismatch {
                seed: seed.shape().to_vec(),
                output: self.shape(output).to_vec(),
            });
        }

        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[output.0].requires_grad {
            adjoints[output.0] = Some(seed.data().to_vec());
        }

        for id in (0..=output.0).rev() {
            if adjoints[id].is_none() || matches!(self.nodes[id].op, Op::Input) {
                continue;
            }
            let (lower, upper) = adjoints.split_at_mut(id);
            let adj = upper[0].as_ref().expect("checked above");
            let node = &self.nodes[id];
            let contributions = grad_op(&node.op, &self.nodes, adj);
            for (parent, grad) in contributions {
                debug_assert!(parent.0 < id, "parent ordering violated");
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut lower[parent.0] {
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grad) {
                            *a += g;
                        }
                    }
                    slot @ None => *slot = Some(grad),
                }
            }
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Input) && node.requires_grad {
                let data = adjoints[id]
                    .take()
                    .unwrap_or_else(|| vec![0.0; node.value.len()]);
                grads[id] = Some(Tensor::from_parts(node.value.shape().to_vec(), data));
            }
        }
        Ok(Gradients { grads })
    }

    /// Recompute every node from the leaves and verify the cached outputs
    /// are reproduced bit-exactly.
    pub fn replay_check(&self) -> Result<()> {
        let mut replayed: Vec<Node> = Vec::with_capacity(self.nodes.len());
        for (index, node) in self.nodes.iter().enumerate() {
            let value = match node.op {
                Op::Input => node.value.clone(),
                _ => eval_op(&node.op, &replayed, index)?,
            };
            if value.data() != self.nodes[index].value.data() {
                return Err(TensorError::ShapeMismatch {
                    op: "replay",
                    detail: format!("node #{index} does not reproduce its cached output"),
                });
            }
            replayed.push(Node {
                op: node.op.clone(),
                value,
                requires_grad: node.requires_grad,
                name: node.name.clone(),
            });
        }
        Ok(())
    }
}

// ── Forward evaluation ──────────────────────────────────────────────

fn eval_op(op: &Op, nodes: &[Node], index: usize) -> Result<Tensor> {
    let value = match op {
        Op::Input => unreachable!("inputs carry their value"),
        Op::MatMul {
            a,
            b,
            trans_a,
            trans_b,
        } => eval_matmul(&nodes[a.0].value, &nodes[b.0].value, *trans_a, *trans_b)?,
        Op::Conv2d { x, w, stride, pad } => {
            eval_conv2d(&nodes[x.0].value, &nodes[w.0].value, *stride, *pad)?
        }
        Op::Add { a, b } => eval_binary(&nodes[a.0].value, &nodes[b.0].value, "add", |x, y| x + y)?,
        Op::Mul { a, b } => eval_binary(&nodes[a.0].value, &nodes[b.0].value, "mul", |x, y| x * y)?,
        Op::Div { a, b } => eval_binary(&nodes[a.0].value, &nodes[b.0].value, "div", |x, y| x / y)?,
        Op::Relu { x } => {
            let v = &nodes[x.0].value;
            Tensor::from_parts(
                v.shape().to_vec(),
                v.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect(),
            )
        }
        Op::GlobalAvgPool { x } => eval_global_avg_pool(&nodes[x.0].value)?,
        Op::RowL2Normalize { x } => eval_row_l2_normalize(&nodes[x.0].value)?,
        Op::Softmax {
            x,
            temperature,
            log,
        } => eval_softmax(&nodes[x.0].value, *temperature, *log)?,
        Op::Concat { inputs, axis } => {
            let tensors: Vec<&Tensor> = inputs.iter().map(|id| &nodes[id.0].value).collect();
            eval_concat(&tensors, *axis)?
        }
        Op::Reshape { x, shape } => {
            let v = &nodes[x.0].value;
            let expected: usize = shape.iter().product();
            if expected != v.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "reshape",
                    detail: format!("cannot reshape {:?} to {shape:?}", v.shape()),
                });
            }
            Tensor::from_parts(shape.clone(), v.data().to_vec())
        }
        Op::Reduce {
            x,
            axes,
            mean,
            keep_dims,
        } => eval_reduce(&nodes[x.0].value, axes, *mean, *keep_dims)?,
    };
    if let Some(_bad) = value.data().iter().find(|v| !v.is_finite()) {
        return Err(TensorError::NonFinite {
            op: op.name(),
            node: index,
        });
    }
    Ok(value)
}

fn matmul_dims(
    a_shape: &[usize],
    b_shape: &[usize],
    trans_a: bool,
    trans_b: bool,
) -> Result<(usize, usize, usize)> {
    if a_shape.len() != 2 || b_shape.len() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            detail: format!("operands must be 2-D, got {a_shape:?} and {b_shape:?}"),
        });
    }
    let (m, ka) = if trans_a {
        (a_shape[1], a_shape[0])
    } else {
        (a_shape[0], a_shape[1])
    };
    let (kb, n) = if trans_b {
        (b_shape[1], b_shape[0])
    } else {
        (b_shape[0], b_shape[1])
    };
    if ka != kb {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            detail: format!(
                "inner dimensions disagree: {a_shape:?} (trans={trans_a}) × {b_shape:?} (trans={trans_b})"
            ),
        });
    }
    Ok((m, ka, n))
}

fn eval_matmul(a: &Tensor, b: &Tensor, trans_a: bool, trans_b: bool) -> Result<Tensor> {
    let (m, k, n) = matmul_dims(a.shape(), b.shape(), trans_a, trans_b)?;
    let out = matmul_raw(a.data(), b.data(), m, k, n, trans_a, trans_b);
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Dense GEMM over row-major slices; `m×k` times `k×n` with the stated
/// operand layouts reinterpreted through the transpose flags.
fn matmul_raw(
    a: &[f64],
    b: &[f64],
    m: usize,
    k: usize,
    n: usize,
    trans_a: bool,
    trans_b: bool,
) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    match (trans_a, trans_b) {
        (false, false) => {
            for i in 0..m {
                for p in 0..k {
                    let av = a[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &b[p * n..(p + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        }
        (false, true) => {
            // b is n×k
            for i in 0..m {
                let arow = &a[i * k..(i + 1) * k];
                for j in 0..n {
                    let brow = &b[j * k..(j + 1) * k];
                    let mut acc = 0.0;
                    for (av, bv) in arow.iter().zip(brow) {
                        acc += av * bv;
                    }
                    out[i * n + j] = acc;
                }
            }
        }
        (true, false) => {
            // a is k×m
            for p in 0..k {
                let arow = &a[p * m..(p + 1) * m];
                let brow = &b[p * n..(p + 1) * n];
                for i in 0..m {
                    let av = arow[i];
                    if av == 0.0 {
                        continue;
                    }
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        }
        (true, true) => {
            // a is k×m, b is n×k
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += a[p * m + i] * b[j * k + p];
                    }
                    out[i * n + j] = acc;
                }
            }
        }
    }
    out
}

struct ConvDims {
    b: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn conv2d_dims(x_shape: &[usize], w_shape: &[usize], stride: usize, pad: usize) -> Result<ConvDims> {
    if x_shape.len() != 4 || w_shape.len() != 4 {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            detail: format!("expected 4-D input and kernel, got {x_shape:?} and {w_shape:?}"),
        });
    }
    if stride == 0 {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            detail: "stride must be ≥ 1".into(),
        });
    }
    let (b, ci, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (co, ci_w, kh, kw) = (w_shape[0], w_shape[1], w_shape[2], w_shape[3]);
    if ci != ci_w {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            detail: format!("input has {ci} channels but kernel expects {ci_w}"),
        });
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            detail: format!("kernel {kh}×{kw} larger than padded input {h}+2·{pad} × {w}+2·{pad}"),
        });
    }
    Ok(ConvDims {
        b,
        ci,
        h,
        w,
        co,
        kh,
        kw,
        oh: (h + 2 * pad - kh) / stride + 1,
        ow: (w + 2 * pad - kw) / stride + 1,
    })
}

fn eval_conv2d(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let d = conv2d_dims(x.shape(), w.shape(), stride, pad)?;
    let ConvDims {
        b,
        ci,
        h,
        w: wd,
        co,
        kh,
        kw,
        oh,
        ow,
    } = d;
    let xd = x.data();
    let wdat = w.data();
    let mut out = vec![0.0; b * co * oh * ow];
    for n in 0..b {
        for c_out in 0..co {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for c_in in 0..ci {
                        let xbase = ((n * ci + c_in) * h) * wd;
                        let wbase = ((c_out * ci + c_in) * kh) * kw;
                        for u in 0..kh {
                            let yy = (i * stride + u) as isize - pad as isize;
                            if yy < 0 || yy >= h as isize {
                                continue;
                            }
                            let xrow = xbase + (yy as usize) * wd;
                            let wrow = wbase + u * kw;
                            for v in 0..kw {
                                let xx = (j * stride + v) as isize - pad as isize;
                                if xx < 0 || xx >= wd as isize {
                                    continue;
                                }
                                acc += xd[xrow + xx as usize] * wdat[wrow + v];
                            }
                        }
                    }
                    out[((n * co + c_out) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, co, oh, ow], out))
}

/// Standard trailing-axis broadcast of two shapes.
fn broadcast_shape(a: &[usize], b: &[usize], op: &'static str) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(TensorError::ShapeMismatch {
                op,
                detail: format!("cannot broadcast {a:?} with {b:?}"),
            });
        };
    }
    Ok(out)
}

/// Row-major strides, with zero stride on broadcast (extent-1 or missing) axes,
/// aligned to the trailing axes of `out_shape`.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - shape.len();
    let mut natural = vec![0usize; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        natural[i] = acc;
        acc *= shape[i];
    }
    let mut strides = vec![0usize; rank];
    for i in 0..rank {
        if i >= offset && shape[i - offset] != 1 {
            strides[i] = natural[i - offset];
        }
    }
    strides
}

fn eval_binary(
    a: &Tensor,
    b: &Tensor,
    op: &'static str,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Ok(Tensor::from_parts(a.shape().to_vec(), data));
    }
    let out_shape = broadcast_shape(a.shape(), b.shape(), op)?;
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let total: usize = out_shape.iter().product();
    let mut data = Vec::with_capacity(total);
    let mut index = vec![0usize; out_shape.len()];
    let (ad, bd) = (a.data(), b.data());
    for _ in 0..total {
        let mut ia = 0;
        let mut ib = 0;
        for (d, &ix) in index.iter().enumerate() {
            ia += ix * sa[d];
            ib += ix * sb[d];
        }
        data.push(f(ad[ia], bd[ib]));
        for d in (0..out_shape.len()).rev() {
            index[d] += 1;
            if index[d] < out_shape[d] {
                break;
            }
            index[d] = 0;
        }
    }
    Ok(Tensor::from_parts(out_shape, data))
}

/// Sum a gradient of `from_shape` down to `to_shape` (undoing a broadcast).
fn reduce_grad_to_shape(grad: &[f64], from_shape: &[usize], to_shape: &[usize]) -> Vec<f64> {
    if from_shape == to_shape {
        return grad.to_vec();
    }
    let strides = broadcast_strides(to_shape, from_shape);
    let out_len: usize = to_shape.iter().product();
    let mut out = vec![0.0; out_len];
    let mut index = vec![0usize; from_shape.len()];
    for &g in grad {
        let mut it = 0;
        for (d, &ix) in index.iter().enumerate() {
            it += ix * strides[d];
        }
        out[it] += g;
        for d in (0..from_shape.len()).rev() {
            index[d] += 1;
            if index[d] < from_shape[d] {
                break;
            }
            index[d] = 0;
        }
    }
    out
}

fn eval_global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let shape = x.shape();
    if shape.len() != 4 {
        return Err(TensorError::ShapeMismatch {
            op: "global_avg_pool",
            detail: format!("expected b×c×h×w, got {shape:?}"),
        });
    }
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let spatial = h * w;
    let mut out = vec![0.0; b * c];
    for n in 0..b {
        for ch in 0..c {
            let base = (n * c + ch) * spatial;
            let sum: f64 = x.data()[base..base + spatial].iter().sum();
            out[n * c + ch] = sum / spatial as f64;
        }
    }
    Ok(Tensor::from_parts(vec![b, c], out))
}

fn eval_row_l2_normalize(x: &Tensor) -> Result<Tensor> {
    let shape = x.shape();
    if shape.len() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "row_l2_normalize",
            detail: format!("expected a 2-D tensor, got {shape:?}"),
        });
    }
    let (rows, cols) = (shape[0], shape[1]);
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let row = &x.data()[r * cols..(r + 1) * cols];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < ROW_NORM_EPS {
            out.extend_from_slice(row);
        } else {
            out.extend(row.iter().map(|v| v / norm));
        }
    }
    Ok(Tensor::from_parts(vec![rows, cols], out))
}

fn eval_softmax(x: &Tensor, temperature: f64, log: bool) -> Result<Tensor> {
    if !(temperature > 0.0) {
        return Err(TensorError::InvalidTemperature {
            op: if log { "log_softmax" } else { "softmax" },
            got: temperature,
        });
    }
    let shape = x.shape();
    if shape.len() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: if log { "log_softmax" } else { "softmax" },
            detail: format!("expected a 2-D tensor, got {shape:?}"),
        });
    }
    let (rows, cols) = (shape[0], shape[1]);
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let row = &x.data()[r * cols..(r + 1) * cols];
        let scaled: Vec<f64> = row.iter().map(|v| v / temperature).collect();
        let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        if log {
            let lse = sum.ln();
            out.extend(scaled.iter().map(|z| z - max - lse));
        } else {
            out.extend(exps.iter().map(|e| e / sum));
        }
    }
    Ok(Tensor::from_parts(vec![rows, cols], out))
}

/// Temperature softmax over rows of a 2-D slice; the same routine backs the
/// graph primitive and any out-of-graph probability computation so matched
/// logits produce bit-identical distributions.
pub fn softmax_rows(data: &[f64], rows: usize, cols: usize, temperature: f64, log: bool) -> Vec<f64> {
    let t = Tensor::from_parts(vec![rows, cols], data.to_vec());
    eval_softmax(&t, temperature, log)
        .expect("softmax_rows: invalid arguments")
        .data()
        .to_vec()
}

fn eval_concat(inputs: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = inputs.first().ok_or_else(|| TensorError::ShapeMismatch {
        op: "concat",
        detail: "at least one input required".into(),
    })?;
    let rank = first.rank();
    if axis >= rank {
        return Err(TensorError::ShapeMismatch {
            op: "concat",
            detail: format!("axis {axis} out of range for rank {rank}"),
        });
    }
    let mut axis_total = 0;
    for t in inputs {
        if t.rank() != rank {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                detail: "inputs must share rank".into(),
            });
        }
        for d in 0..rank {
            if d != axis && t.shape()[d] != first.shape()[d] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    detail: format!(
                        "shapes {:?} and {:?} differ outside axis {axis}",
                        first.shape(),
                        t.shape()
                    ),
                });
            }
        }
        axis_total += t.shape()[axis];
    }
    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = axis_total;

    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(out_shape.iter().product());
    for o in 0..outer {
        for t in inputs {
            let ext = t.shape()[axis];
            let base = o * ext * inner;
            data.extend_from_slice(&t.data()[base..base + ext * inner]);
        }
    }
    Ok(Tensor::from_parts(out_shape, data))
}

fn reduce_out_shape(shape: &[usize], axes: &[usize], keep_dims: bool) -> Result<Vec<usize>> {
    let mut seen = vec![false; shape.len()];
    for &ax in axes {
        if ax >= shape.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reduce",
                detail: format!("axis {ax} out of range for shape {shape:?}"),
            });
        }
        if seen[ax] {
            return Err(TensorError::ShapeMismatch {
                op: "reduce",
                detail: format!("duplicate axis {ax}"),
            });
        }
        seen[ax] = true;
    }
    let mut out = Vec::new();
    for (d, &ext) in shape.iter().enumerate() {
        if seen[d] {
            if keep_dims {
                out.push(1);
            }
        } else {
            out.push(ext);
        }
    }
    Ok(out)
}

fn eval_reduce(x: &Tensor, axes: &[usize], mean: bool, keep_dims: bool) -> Result<Tensor> {
    let shape = x.shape();
    let out_shape = reduce_out_shape(shape, axes, keep_dims)?;
    let reduced: bool = !axes.is_empty();
    if !reduced {
        return Ok(Tensor::from_parts(out_shape, x.data().to_vec()));
    }
    let mut is_reduced = vec![false; shape.len()];
    for &ax in axes {
        is_reduced[ax] = true;
    }
    // Stride of each input axis in the (squeezed) output.
    let mut out_strides = vec![0usize; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        if !is_reduced[d] {
            out_strides[d] = acc;
            acc *= shape[d];
        }
    }
    let out_len = acc;
    let count: usize = axes.iter().map(|&a| shape[a]).product();
    let mut out = vec![0.0; out_len];
    let mut index = vec![0usize; shape.len()];
    for &v in x.data() {
        let mut o = 0;
        for (d, &ix) in index.iter().enumerate() {
            o += ix * out_strides[d];
        }
        out[o] += v;
        for d in (0..shape.len()).rev() {
            index[d] += 1;
            if index[d] < shape[d] {
                break;
            }
            index[d] = 0;
        }
    }
    if mean {
        let denom = count as f64;
        for v in &mut out {
            *v /= denom;
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

// ── Backward rules ──────────────────────────────────────────────────

/// Gradient contributions of one node to its parents, in parent order.
fn grad_op(op: &Op, nodes: &[Node], adj: &[f64]) -> Vec<(NodeId, Vec<f64>)> {
    match op {
        Op::Input => vec![],
        Op::MatMul {
            a,
            b,
            trans_a,
            trans_b,
        } => {
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            let (m, k, n) = matmul_dims(av.shape(), bv.shape(), *trans_a, *trans_b)
                .expect("validated in forward");
            // c = a' × b' with a' = m×k, b' = k×n
            let da = if !trans_a {
                // da = adj × b'ᵀ
                matmul_raw(adj, bv.data(), m, n, k, false, !trans_b)
            } else {
                // a stored k×m: da = b' × adjᵀ
                matmul_raw(bv.data(), adj, k, n, m, *trans_b, true)
            };
            let db = if !trans_b {
                // db = a'ᵀ × adj
                matmul_raw(av.data(), adj, k, m, n, !trans_a, false)
            } else {
                // b stored n×k: db = adjᵀ × a'
                matmul_raw(adj, av.data(), n, m, k, true, *trans_a)
            };
            vec![(*a, da), (*b, db)]
        }
        Op::Conv2d { x, w, stride, pad } => grad_conv2d(
            &nodes[x.0].value,
            &nodes[w.0].value,
            *stride,
            *pad,
            adj,
            *x,
            *w,
        ),
        Op::Add { a, b } => {
            let out_shape = broadcast_shape(
                nodes[a.0].value.shape(),
                nodes[b.0].value.shape(),
                "add",
            )
            .expect("validated in forward");
            let da = reduce_grad_to_shape(adj, &out_shape, nodes[a.0].value.shape());
            let db = reduce_grad_to_shape(adj, &out_shape, nodes[b.0].value.shape());
            vec![(*a, da), (*b, db)]
        }
        Op::Mul { a, b } => {
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            let out_shape =
                broadcast_shape(av.shape(), bv.shape(), "mul").expect("validated in forward");
            let full_a = broadcast_apply(adj, &out_shape, bv, |g, y| g * y);
            let full_b = broadcast_apply(adj, &out_shape, av, |g, x| g * x);
            vec![
                (*a, reduce_grad_to_shape(&full_a, &out_shape, av.shape())),
                (*b, reduce_grad_to_shape(&full_b, &out_shape, bv.shape())),
            ]
        }
        Op::Div { a, b } => {
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            let out_shape =
                broadcast_shape(av.shape(), bv.shape(), "div").expect("validated in forward");
            let full_a = broadcast_apply(adj, &out_shape, bv, |g, y| g / y);
            // d/db (a/b) = −a/b²
            let sa = broadcast_strides(av.shape(), &out_shape);
            let sb = broadcast_strides(bv.shape(), &out_shape);
            let mut full_b = vec![0.0; adj.len()];
            let mut index = vec![0usize; out_shape.len()];
            for (flat, &g) in adj.iter().enumerate() {
                let mut ia = 0;
                let mut ib = 0;
                for (d, &ix) in index.iter().enumerate() {
                    ia += ix * sa[d];
                    ib += ix * sb[d];
                }
                let y = bv.data()[ib];
                full_b[flat] = -g * av.data()[ia] / (y * y);
                for d in (0..out_shape.len()).rev() {
                    index[d] += 1;
                    if index[d] < out_shape[d] {
                        break;
                    }
                    index[d] = 0;
                }
            }
            vec![
                (*a, reduce_grad_to_shape(&full_a, &out_shape, av.shape())),
                (*b, reduce_grad_to_shape(&full_b, &out_shape, bv.shape())),
            ]
        }
        Op::Relu { x } => {
            let xv = &nodes[x.0].value;
            let dx = xv
                .data()
                .iter()
                .zip(adj)
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect();
            vec![(*x, dx)]
        }
        Op::GlobalAvgPool { x } => {
            let shape = nodes[x.0].value.shape();
            let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
            let spatial = h * w;
            let mut dx = vec![0.0; b * c * spatial];
            for n in 0..b {
                for ch in 0..c {
                    let g = adj[n * c + ch] / spatial as f64;
                    let base = (n * c + ch) * spatial;
                    for v in &mut dx[base..base + spatial] {
                        *v = g;
                    }
                }
            }
            vec![(*x, dx)]
        }
        Op::RowL2Normalize { x } => {
            let xv = &nodes[x.0].value;
            let (rows, cols) = (xv.shape()[0], xv.shape()[1]);
            let mut dx = vec![0.0; rows * cols];
            for r in 0..rows {
                let row = &xv.data()[r * cols..(r + 1) * cols];
                let g = &adj[r * cols..(r + 1) * cols];
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                let slot = &mut dx[r * cols..(r + 1) * cols];
                if norm < ROW_NORM_EPS {
                    slot.copy_from_slice(g);
                } else {
                    let y: Vec<f64> = row.iter().map(|v| v / norm).collect();
                    let dot: f64 = y.iter().zip(g).map(|(yi, gi)| yi * gi).sum();
                    for i in 0..cols {
                        slot[i] = (g[i] - y[i] * dot) / norm;
                    }
                }
            }
            vec![(*x, dx)]
        }
        Op::Softmax {
            x,
            temperature,
            log,
        } => {
            let xv = &nodes[x.0].value;
            let (rows, cols) = (xv.shape()[0], xv.shape()[1]);
            let mut dx = vec![0.0; rows * cols];
            for r in 0..rows {
                let row = &xv.data()[r * cols..(r + 1) * cols];
                let g = &adj[r * cols..(r + 1) * cols];
                let probs = softmax_rows(row, 1, cols, *temperature, false);
                let slot = &mut dx[r * cols..(r + 1) * cols];
                if *log {
                    let gsum: f64 = g.iter().sum();
                    for i in 0..cols {
                        slot[i] = (g[i] - probs[i] * gsum) / temperature;
                    }
                } else {
                    let dot: f64 = probs.iter().zip(g).map(|(p, gi)| p * gi).sum();
                    for i in 0..cols {
                        slot[i] = probs[i] * (g[i] - dot) / temperature;
                    }
                }
            }
            vec![(*x, dx)]
        }
        Op::Concat { inputs, axis } => {
            let rank = nodes[inputs[0].0].value.rank();
            let outer: usize = nodes[inputs[0].0].value.shape()[..*axis].iter().product();
            let inner: usize = nodes[inputs[0].0].value.shape()[*axis + 1..].iter().product();
            let _ = rank;
            let exts: Vec<usize> = inputs
                .iter()
                .map(|id| nodes[id.0].value.shape()[*axis])
                .collect();
            let total_axis: usize = exts.iter().sum();
            let mut grads: Vec<Vec<f64>> = inputs
                .iter()
                .map(|id| vec![0.0; nodes[id.0].value.len()])
                .collect();
            for o in 0..outer {
                let mut offset = 0;
                for (which, &ext) in exts.iter().enumerate() {
                    let src = (o * total_axis + offset) * inner;
                    let dst = o * ext * inner;
                    grads[which][dst..dst + ext * inner]
                        .copy_from_slice(&adj[src..src + ext * inner]);
                    offset += ext;
                }
            }
            inputs.iter().copied().zip(grads).collect()
        }
        Op::Reshape { x, .. } => vec![(*x, adj.to_vec())],
        Op::Reduce {
            x,
            axes,
            mean,
            keep_dims: _,
        } => {
            let shape = nodes[x.0].value.shape();
            let mut is_reduced = vec![false; shape.len()];
            for &ax in axes {
                is_reduced[ax] = true;
            }
            let mut out_strides = vec![0usize; shape.len()];
            let mut acc = 1;
            for d in (0..shape.len()).rev() {
                if !is_reduced[d] {
                    out_strides[d] = acc;
                    acc *= shape[d];
                }
            }
            let count: usize = axes.iter().map(|&a| shape[a]).product();
            let scale = if *mean { 1.0 / count as f64 } else { 1.0 };
            let mut dx = vec![0.0; nodes[x.0].value.len()];
            let mut index = vec![0usize; shape.len()];
            for slot in dx.iter_mut() {
                let mut o = 0;
                for (d, &ix) in index.iter().enumerate() {
                    o += ix * out_strides[d];
                }
                *slot = adj[o] * scale;
                for d in (0..shape.len()).rev() {
                    index[d] += 1;
                    if index[d] < shape[d] {
                        break;
                    }
                    index[d] = 0;
                }
            }
            vec![(*x, dx)]
        }
    }
}

/// Elementwise combine of a full-shape gradient with a broadcast operand.
fn broadcast_apply(
    adj: &[f64],
    out_shape: &[usize],
    operand: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    if operand.shape() == out_shape {
        return adj
            .iter()
            .zip(operand.data())
            .map(|(&g, &v)| f(g, v))
            .collect();
    }
    let strides = broadcast_strides(operand.shape(), out_shape);
    let mut out = vec![0.0; adj.len()];
    let mut index = vec![0usize; out_shape.len()];
    for (flat, &g) in adj.iter().enumerate() {
        let mut io = 0;
        for (d, &ix) in index.iter().enumerate() {
            io += ix * strides[d];
        }
        out[flat] = f(g, operand.data()[io]);
        for d in (0..out_shape.len()).rev() {
            index[d] += 1;
            if index[d] < out_shape[d] {
                break;
            }
            index[d] = 0;
        }
    }
    out
}

fn grad_conv2d(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    pad: usize,
    adj: &[f64],
    x_id: NodeId,
    w_id: NodeId,
) -> Vec<(NodeId, Vec<f64>)> {
    let xs = x.shape();
    let ws = w.shape();
    let (b, ci, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (co, _, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let xd = x.data();
    let wdat = w.data();
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    for n in 0..b {
        for c_out in 0..co {
            for i in 0..oh {
                for j in 0..ow {
                    let g = adj[((n * co + c_out) * oh + i) * ow + j];
                    if g == 0.0 {
                        continue;
                    }
                    for c_in in 0..ci {
                        let xbase = ((n * ci + c_in) * h) * wd;
                        let wbase = ((c_out * ci + c_in) * kh) * kw;
                        for u in 0..kh {
                            let yy = (i * stride + u) as isize - pad as isize;
                            if yy < 0 || yy >= h as isize {
                                continue;
                            }
                            let xrow = xbase + (yy as usize) * wd;
                            let wrow = wbase + u * kw;
                            for v in 0..kw {
                                let xx = (j * stride + v) as isize - pad as isize;
                                if xx < 0 || xx >= wd as isize {
                                    continue;
                                }
                                dx[xrow + xx as usize] += g * wdat[wrow + v];
                                dw[wrow + v] += g * xd[xrow + xx as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    vec![(x_id, dx), (w_id, dw)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn global_avg_pool_means_spatial_values() {
        let mut g = Graph::new();
        let x = g.input("x", t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(y).data(), &[2.5]);
    }

    #[test]
    fn relu_clamps_negatives_and_zero() {
        let mut g = Graph::new();
        let x = g.input("x", t(&[3], &[-1.0, 0.0, 2.0]));
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn row_l2_normalize_345_triangle() {
        let mut g = Graph::new();
        let x = g.input("x", t(&[1, 2], &[3.0, 4.0]));
        let y = g.row_l2_normalize(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.6, 0.8]);
    }

    #[test]
    fn row_l2_normalize_keeps_zero_rows() {
        let mut g = Graph::new();
        let x = g.input("x", t(&[2, 2], &[0.0, 0.0, 3.0, 4.0]));
        let y = g.row_l2_normalize(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.6, 0.8]);
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut g = Graph::new();
        let x = g.input("x", t(&[2, 2], &[1.0, -2.0, 3.0, 0.5]).requires_grad(true));
        let s = g.sum_all(x).unwrap();
        let grads = g.backward_scalar(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn product_rule_for_scalars() {
        let mut g = Graph::new();
        let x = g.input("x", Tensor::scalar(2.0).requires_grad(true));
        let y = g.input("y", Tensor::scalar(3.0).requires_grad(true));
        let p = g.mul(x, y).unwrap();
        let grads = g.backward_scalar(p).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 3.0);
        assert_eq!(grads.get(y).unwrap().item(), 2.0);
    }

    #[test]
    fn relu_subgradient_is_zero_at_and_below_zero() {
        let mut g = Graph::new();
        let x = g.input("x", t(&[3], &[-1.0, 0.0, 2.0]).requires_grad(true));
        let y = g.relu(x).unwrap();
        let s = g.sum_all(y).unwrap();
        let grads = g.backward_scalar(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn backward_twice_errors() {
        let mut g = Graph::new();
        let x = g.input("x", Tensor::scalar(1.0).requires_grad(true));
        let y = g.square(x).unwrap();
        g.backward_scalar(y).unwrap();
        let err = g.backward_scalar(y).unwrap_err();
        assert!(matches!(err, TensorError::RecordConsumed));
    }

    #[test]
    fn backward_rejects_bad_seed_shape() {
        let mut g = Graph::new();
        let x = g.input("x", t(&[2], &[1.0, 2.0]).requires_grad(true));
        let y = g.relu(x).unwrap();
        let err = g.backward(y, &Tensor::scalar(1.0)).unwrap_err();
        assert!(matches!(err, TensorError::SeedShapeMismatch { .. }));
    }

    #[test]
    fn division_by_zero_reports_non_finite_with_node_index() {
        let mut g = Graph::new();
        let a = g.input("a", t(&[2], &[1.0, 2.0]));
        let b = g.input("b", t(&[2], &[1.0, 0.0]));
        let err = g.div(a, b).unwrap_err();
        match err {
            TensorError::NonFinite { op, node } => {
                assert_eq!(op, "div");
                assert_eq!(node, 2);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let mut g = Graph::new();
        let a = g.input("a", t(&[2, 3], &[0.0; 6]));
        let b = g.input("b", t(&[2, 2], &[0.0; 4]));
        assert!(g.matmul(a, b).is_err());
    }

    #[test]
    fn matmul_transpose_variants_agree() {
        // a: 2×3, b: 3×2
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t(&[3, 2], &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let at = t(&[3, 2], &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let bt = t(&[2, 3], &[7.0, 9.0, 11.0, 8.0, 10.0, 12.0]);

        let reference = {
            let mut g = Graph::new();
            let an = g.input("a", a.clone());
            let bn = g.input("b", b.clone());
            let c = g.matmul(an, bn).unwrap();
            g.value(c).clone()
        };
        for (lhs, rhs, ta, tb) in [
            (a.clone(), bt.clone(), false, true),
            (at.clone(), b.clone(), true, false),
            (at, bt, true, true),
        ] {
            let mut g = Graph::new();
            let an = g.input("a", lhs);
            let bn = g.input("b", rhs);
            let c = g.matmul_t(an, bn, ta, tb).unwrap();
            assert_eq!(g.value(c).data(), reference.data(), "ta={ta} tb={tb}");
        }
    }

    #[test]
    fn broadcast_add_bias_row() {
        let mut g = Graph::new();
        let x = g.input("x", t(&[2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).requires_grad(true));
        let bias = g.input("b", t(&[3], &[10.0, 20.0, 30.0]).requires_grad(true));
        let y = g.add(x, bias).unwrap();
        assert_eq!(
            g.value(y).data(),
            &[10.0, 21.0, 32.0, 13.0, 24.0, 35.0]
        );
        let s = g.sum_all(y).unwrap();
        let grads = g.backward_scalar(s).unwrap();
        assert_eq!(grads.get(bias).unwrap().data(), &[2.0, 2.0, 2.0]);
        assert_eq!(grads.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_match_log_variant() {
        let mut g = Graph::new();
        let x = g.input("x", t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.0, 1.0]));
        let p = g.softmax(x, 4.0).unwrap();
        let lp = g.log_softmax(x, 4.0).unwrap();
        for r in 0..2 {
            let row = &g.value(p).data()[r * 3..(r + 1) * 3];
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            for c in 0..3 {
                let diff = (row[c].ln() - g.value(lp).data()[r * 3 + c]).abs();
                assert!(diff < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rejects_non_positive_temperature() {
        let mut g = Graph::new();
        let x = g.input("x", t(&[1, 2], &[1.0, 2.0]));
        assert!(matches!(
            g.softmax(x, 0.0).unwrap_err(),
            TensorError::InvalidTemperature { .. }
        ));
    }

    #[test]
    fn concat_axis1_and_gradient_split() {
        let mut g = Graph::new();
        let a = g.input("a", t(&[2, 1], &[1.0, 2.0]).requires_grad(true));
        let b = g.input("b", t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]).requires_grad(true));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 3]);
        assert_eq!(g.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let weights = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let weighted = g.mul(c, weights).unwrap();
        let s = g.sum_all(weighted).unwrap();
        let grads = g.backward_scalar(s).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[1.0, 4.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[2.0, 3.0, 5.0, 6.0]);
    }

    #[test]
    fn avg_pool2_blocks() {
        let mut g = Graph::new();
        #[rustfmt::skip]
        let x = g.input("x", t(&[1, 1, 4, 4], &[
            1.0, 2.0, 3.0, 4.0,
            5.0, 6.0, 7.0, 8.0,
            9.0, 10.0, 11.0, 12.0,
            13.0, 14.0, 15.0, 16.0,
        ]));
        let y = g.avg_pool2(x).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 2, 2]);
        assert_eq!(g.value(y).data(), &[3.5, 5.5, 11.5, 13.5]);
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut g = Graph::new();
        let x = g.input("x", t(&[1, 1, 3, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]));
        let w = g.input("w", t(&[1, 1, 1, 1], &[2.0]));
        let y = g.conv2d(x, w, 1, 0).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 3, 3]);
        assert_eq!(
            g.value(y).data(),
            &[2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0]
        );
    }

    #[test]
    fn conv2d_padded_sum_kernel() {
        // 3×3 all-ones kernel with pad 1 sums each 8-neighbourhood.
        let mut g = Graph::new();
        let x = g.input("x", t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let w = g.input("w", t(&[1, 1, 3, 3], &[1.0; 9]));
        let y = g.conv2d(x, w, 1, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 2, 2]);
        assert_eq!(g.value(y).data(), &[10.0, 10.0, 10.0, 10.0]);
    }

    #[test]
    fn gradients_accumulate_over_shared_inputs() {
        // y = x·x + x ⇒ dy/dx = 2x + 1
        let mut g = Graph::new();
        let x = g.input("x", Tensor::scalar(3.0).requires_grad(true));
        let sq = g.square(x).unwrap();
        let y = g.add(sq, x).unwrap();
        let grads = g.backward_scalar(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 7.0);
    }

    #[test]
    fn off_path_input_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.input("x", Tensor::scalar(1.0).requires_grad(true));
        let unused = g.input("unused", t(&[2], &[1.0, 2.0]).requires_grad(true));
        let y = g.square(x).unwrap();
        let grads = g.backward_scalar(y).unwrap();
        assert_eq!(grads.get(unused).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn replay_reproduces_cached_outputs() {
        let mut g = Graph::new();
        let x = g.input("x", t(&[2, 2], &[0.3, -0.7, 1.1, 0.0]));
        let w = g.input("w", t(&[2, 2], &[0.5, -0.25, 1.5, 2.0]));
        let h = g.matmul(x, w).unwrap();
        let r = g.relu(h).unwrap();
        let p = g.softmax(r, 2.0).unwrap();
        let _ = g.sum_all(p).unwrap();
        g.replay_check().unwrap();
    }

    #[test]
    fn determinism_bitwise_across_runs() {
        let run = || {
            let mut g = Graph::new();
            let x = g.input("x", t(&[2, 3], &[0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).requires_grad(true));
            let w = g.input("w", t(&[3, 2], &[1.0, 2.0, -3.0, 4.0, 5.0, -6.0]).requires_grad(true));
            let h = g.matmul(x, w).unwrap();
            let r = g.relu(h).unwrap();
            let s = g.mean_all(r).unwrap();
            let out = g.value(s).item();
            let grads = g.backward_scalar(s).unwrap();
            (
                out,
                grads.get(x).unwrap().data().to_vec(),
                grads.get(w).unwrap().data().to_vec(),
            )
        };
        let (o1, gx1, gw1) = run();
        let (o2, gx2, gw2) = run();
        assert!(o1.to_bits() == o2.to_bits());
        assert!(gx1.iter().zip(&gx2).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(gw1.iter().zip(&gw2).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
