//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every primitive application in topological order;
//! [`Tape::backward`] walks the record in reverse and accumulates adjoints
//! into every node that (transitively) depends on a variable leaf. The tape
//! is confined to one thread; parallelism belongs at the level of
//! independent reconstruction attempts, never inside one tape.
//!
//! Evaluation order inside every kernel is fixed (row-major index order,
//! sequential accumulation, no fused multiply-add), so identical inputs
//! reproduce bit-identical outputs on one platform.
//!
//! Forward kernels are generic over the scalar type: the f32 instantiation
//! is the production path, while [`Tape::replay_f64`] re-evaluates a
//! recorded tape in f64 and is the basis for high-precision
//! finite-difference gradient checks (see [`crate::gradcheck`]).

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("unknown primitive kind `{0}`")]
    UnknownKind(String),
    #[error("{primitive}: expected {expected} inputs, got {got}")]
    Arity {
        primitive: &'static str,
        expected: &'static str,
        got: usize,
    },
    #[error("{primitive}: {detail}")]
    Shape {
        primitive: &'static str,
        detail: String,
    },
    #[error("backward requires a scalar output node, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },
    #[error("node {node} is not on this tape (tape has {len} nodes)")]
    DetachedNode { node: usize, len: usize },
}

fn shape_err(primitive: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape { primitive, detail }
}

/// Identifier of a node on a specific [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The primitive vocabulary of the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimitiveKind {
    MatMul,
    Add,
    Scale,
    Relu,
    Tanh,
    Sigmoid,
    Conv2d,
    ConvTranspose2d,
    NearestUpsample2x,
    Mean,
    Variance,
    L2NormSq,
    ElementwiseMul,
    Concat,
    Reshape,
    InstanceNorm,
    Softplus,
    Sqrt,
    LogSoftmax,
}

impl PrimitiveKind {
    pub fn name(self) -> &'static str {
        use PrimitiveKind::*;
        match self {
            MatMul => "matmul",
            Add => "add",
            Scale => "scale",
            Relu => "relu",
            Tanh => "tanh",
            Sigmoid => "sigmoid",
            Conv2d => "conv2d",
            ConvTranspose2d => "conv_transpose2d",
            NearestUpsample2x => "nearest_upsample2x",
            Mean => "mean",
            Variance => "variance",
            L2NormSq => "l2_norm_sq",
            ElementwiseMul => "elementwise_mul",
            Concat => "concat",
            Reshape => "reshape",
            InstanceNorm => "instance_norm",
            Softplus => "softplus",
            Sqrt => "sqrt",
            LogSoftmax => "log_softmax",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, AutodiffError> {
        use PrimitiveKind::*;
        Ok(match name {
            "matmul" => MatMul,
            "add" => Add,
            "scale" => Scale,
            "relu" => Relu,
            "tanh" => Tanh,
            "sigmoid" => Sigmoid,
            "conv2d" => Conv2d,
            "conv_transpose2d" => ConvTranspose2d,
            "nearest_upsample2x" => NearestUpsample2x,
            "mean" => Mean,
            "variance" => Variance,
            "l2_norm_sq" => L2NormSq,
            "elementwise_mul" => ElementwiseMul,
            "concat" => Concat,
            "reshape" => Reshape,
            "instance_norm" => InstanceNorm,
            "softplus" => Softplus,
            "sqrt" => Sqrt,
            "log_softmax" => LogSoftmax,
            other => return Err(AutodiffError::UnknownKind(other.to_string())),
        })
    }

    pub const ALL: [PrimitiveKind; 19] = [
        PrimitiveKind::MatMul,
        PrimitiveKind::Add,
        PrimitiveKind::Scale,
        PrimitiveKind::Relu,
        PrimitiveKind::Tanh,
        PrimitiveKind::Sigmoid,
        PrimitiveKind::Conv2d,
        PrimitiveKind::ConvTranspose2d,
        PrimitiveKind::NearestUpsample2x,
        PrimitiveKind::Mean,
        PrimitiveKind::Variance,
        PrimitiveKind::L2NormSq,
        PrimitiveKind::ElementwiseMul,
        PrimitiveKind::Concat,
        PrimitiveKind::Reshape,
        PrimitiveKind::InstanceNorm,
        PrimitiveKind::Softplus,
        PrimitiveKind::Sqrt,
        PrimitiveKind::LogSoftmax,
    ];
}

/// Attributes for primitives that take parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Attrs {
    pub stride: usize,
    pub padding: usize,
    pub factor: f32,
    pub axis: usize,
    pub shape: Vec<usize>,
    pub epsilon: f32,
}

impl Default for Attrs {
    fn default() -> Self {
        Attrs {
            stride: 1,
            padding: 0,
            factor: 1.0,
            axis: 0,
            shape: Vec::new(),
            epsilon: 1e-5,
        }
    }
}

impl Attrs {
    pub fn scale(factor: f32) -> Self {
        Attrs {
            factor,
            ..Default::default()
        }
    }
    pub fn conv(stride: usize, padding: usize) -> Self {
        Attrs {
            stride,
            padding,
            ..Default::default()
        }
    }
    pub fn reshape(shape: Vec<usize>) -> Self {
        Attrs {
            shape,
            ..Default::default()
        }
    }
    pub fn concat(axis: usize) -> Self {
        Attrs {
            axis,
            ..Default::default()
        }
    }
    pub fn instance_norm(epsilon: f32) -> Self {
        Attrs {
            epsilon,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
enum Expr {
    Leaf,
    Prim {
        kind: PrimitiveKind,
        inputs: Vec<NodeId>,
        attrs: Attrs,
    },
}

#[derive(Debug, Clone)]
struct Node {
    expr: Expr,
    value: Tensor,
    needs_grad: bool,
}

/// Gradients of one backward pass, indexed by [`NodeId`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the backward output with respect to `id`, if `id`
    /// depends on a variable (or is one) and is reachable from the output.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

/// Records primitive applications and runs reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that participates in differentiation.
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push(Expr::Leaf, value, true)
    }

    /// A leaf treated as a constant: no gradient is computed for it, and
    /// backward skips whole subgraphs that only depend on constants.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Expr::Leaf, value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Whether a node transitively depends on a variable leaf.
    pub fn node_needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, expr: Expr, value: Tensor, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            expr,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn check_on_tape(&self, id: NodeId, primitive: &'static str) -> Result<(), AutodiffError> {
        if id.0 >= self.nodes.len() {
            return Err(AutodiffError::DetachedNode {
                node: id.0,
                len: self.nodes.len(),
            });
        }
        let _ = primitive;
        Ok(())
    }

    /// Apply a primitive to recorded nodes, recording the result.
    pub fn apply_primitive(
        &mut self,
        kind: PrimitiveKind,
        inputs: &[NodeId],
        attrs: &Attrs,
    ) -> Result<NodeId, AutodiffError> {
        for &id in inputs {
            self.check_on_tape(id, kind.name())?;
        }
        let vals: Vec<&Tensor> = inputs.iter().map(|&id| &self.nodes[id.0].value).collect();
        let value = forward(kind, &vals, attrs)?;
        let needs_grad = inputs.iter().any(|&id| self.nodes[id.0].needs_grad);
        Ok(self.push(
            Expr::Prim {
                kind,
                inputs: inputs.to_vec(),
                attrs: attrs.clone(),
            },
            value,
            needs_grad,
        ))
    }

    // Convenience wrappers.

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply_primitive(PrimitiveKind::MatMul, &[a, b], &Attrs::default())
    }
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply_primitive(PrimitiveKind::Add, &[a, b], &Attrs::default())
    }
    pub fn scale(&mut self, x: NodeId, factor: f32) -> Result<NodeId, AutodiffError> {
        self.apply_primitive(PrimitiveKind::Scale, &[x], &Attrs::scale(factor))
    }
    /// `a - b`, composed from `add` and `scale`.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }
    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply_primitive(PrimitiveKind::Relu, &[x], &Attrs::default())
    }
    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply_primitive(PrimitiveKind::Tanh, &[x], &Attrs::default())
    }
    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply_primitive(PrimitiveKind::Sigmoid, &[x], &Attrs::default())
    }
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId, AutodiffError> {
        let mut inputs = vec![x, w];
        if let Some(b) = bias {
            inputs.push(b);
        }
        self.apply_primitive(PrimitiveKind::Conv2d, &inputs, &Attrs::conv(stride, padding))
    }
    pub fn conv_transpose2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId, AutodiffError> {
        let mut inputs = vec![x, w];
        if let Some(b) = bias {
            inputs.push(b);
        }
        self.apply_primitive(
            PrimitiveKind::ConvTranspose2d,
            &inputs,
            &Attrs::conv(stride, padding),
        )
    }
    pub fn upsample2x(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply_primitive(PrimitiveKind::NearestUpsample2x, &[x], &Attrs::default())
    }
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply_primitive(PrimitiveKind::Mean, &[x], &Attrs::default())
    }
    pub fn variance(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply_primitive(PrimitiveKind::Variance, &[x], &Attrs::default())
    }
    pub fn l2_norm_sq(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply_primitive(PrimitiveKind::L2NormSq, &[x], &Attrs::default())
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply_primitive(PrimitiveKind::ElementwiseMul, &[a, b], &Attrs::default())
    }
    pub fn concat(&mut self, axis: usize, parts: &[NodeId]) -> Result<NodeId, AutodiffError> {
        self.apply_primitive(PrimitiveKind::Concat, parts, &Attrs::concat(axis))
    }
    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId, AutodiffError> {
        self.apply_primitive(PrimitiveKind::Reshape, &[x], &Attrs::reshape(shape))
    }
    pub fn instance_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        epsilon: f32,
    ) -> Result<NodeId, AutodiffError> {
        self.apply_primitive(
            PrimitiveKind::InstanceNorm,
            &[x, gamma, beta],
            &Attrs::instance_norm(epsilon),
        )
    }
    pub fn softplus(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply_primitive(PrimitiveKind::Softplus, &[x], &Attrs::default())
    }
    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply_primitive(PrimitiveKind::Sqrt, &[x], &Attrs::default())
    }
    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply_primitive(PrimitiveKind::LogSoftmax, &[x], &Attrs::default())
    }
    /// Sum of all elements, composed as `mean * numel`.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let n = self.value(x).numel() as f32;
        let m = self.mean(x)?;
        self.scale(m, n)
    }

    /// Reverse-mode differentiation from a scalar output node.
    ///
    /// Returns the gradient of the output with respect to every node that
    /// needs one; constant-only subgraphs are skipped entirely.
    pub fn backward(&self, output: NodeId) -> Result<Gradients, AutodiffError> {
        if output.0 >= self.nodes.len() {
            return Err(AutodiffError::DetachedNode {
                node: output.0,
                len: self.nodes.len(),
            });
        }
        let out_val = &self.nodes[output.0].value;
        if !out_val.is_scalar() {
            return Err(AutodiffError::NonScalarOutput {
                shape: out_val.shape().to_vec(),
            });
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::scalar(1.0));

        for i in (0..=output.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let (kind, inputs, attrs) = match &self.nodes[i].expr {
                Expr::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Expr::Prim {
                    kind,
                    inputs,
                    attrs,
                } => (*kind, inputs.clone(), attrs.clone()),
            };
            let in_vals: Vec<&Tensor> =
                inputs.iter().map(|&id| &self.nodes[id.0].value).collect();
            let needs: Vec<bool> = inputs
                .iter()
                .map(|&id| self.nodes[id.0].needs_grad)
                .collect();
            let input_grads = backward_prim(kind, &in_vals, &attrs, &self.nodes[i].value, &g, &needs);
            for (slot, ig) in inputs.iter().zip(input_grads) {
                if let Some(ig) = ig {
                    match &mut grads[slot.0] {
                        Some(existing) => {
                            let dst = existing.data_mut();
                            for (d, s) in dst.iter_mut().zip(ig.data()) {
                                *d += *s;
                            }
                        }
                        empty => *empty = Some(ig),
                    }
                }
            }
            grads[i] = Some(g);
        }

        Ok(Gradients { grads })
    }

    /// Re-evaluate the recorded computation in f64, optionally overriding
    /// leaf values. Nodes are recomputed in order; the result is the f64
    /// value of `output`. Used by finite-difference oracles.
    pub fn replay_f64(
        &self,
        overrides: &[(NodeId, Vec<f64>)],
        output: NodeId,
    ) -> Result<f64, AutodiffError> {
        Ok(self.replay_f64_with_signature(overrides, output)?.0)
    }

    /// Like [`Tape::replay_f64`], but also returns a hash over the signs of
    /// every relu input encountered. Two replays whose signatures differ
    /// crossed a relu kink between them, which finite-difference checks use
    /// to exclude those measure-zero coordinates.
    pub fn replay_f64_with_signature(
        &self,
        overrides: &[(NodeId, Vec<f64>)],
        output: NodeId,
    ) -> Result<(f64, u64), AutodiffError> {
        self.check_on_tape(output, "replay")?;
        let mut signature = 0xcbf2_9ce4_8422_2325u64;
        let mut values: Vec<Tensor64> = Vec::with_capacity(output.0 + 1);
        for i in 0..=output.0 {
            let node = &self.nodes[i];
            let v = match &node.expr {
                Expr::Leaf => {
                    let over = overrides.iter().find(|(id, _)| id.0 == i);
                    match over {
                        Some((_, data)) => Tensor64 {
                            shape: node.value.shape().to_vec(),
                            data: data.clone(),
                        },
                        None => Tensor64::from_f32(&node.value),
                    }
                }
                Expr::Prim {
                    kind,
                    inputs,
                    attrs,
                } => {
                    if *kind == PrimitiveKind::Relu {
                        for &x in &values[inputs[0].0].data {
                            signature ^= (x > 0.0) as u64;
                            signature = signature.wrapping_mul(0x0000_0100_0000_01b3);
                        }
                    }
                    let vals: Vec<&Tensor64> = inputs.iter().map(|id| &values[id.0]).collect();
                    forward_f64(*kind, &vals, attrs)?
                }
            };
            values.push(v);
        }
        let out = &values[output.0];
        debug_assert_eq!(out.data.len(), 1);
        Ok((out.data[0], signature))
    }

    /// Recompute every non-leaf node from its recorded inputs and compare
    /// bit patterns against the stored values. True iff the whole tape
    /// replays bit-exactly.
    pub fn replays_bit_exactly(&self) -> bool {
        for node in &self.nodes {
            if let Expr::Prim {
                kind,
                inputs,
                attrs,
            } = &node.expr
            {
                let vals: Vec<&Tensor> =
                    inputs.iter().map(|&id| &self.nodes[id.0].value).collect();
                match forward(*kind, &vals, attrs) {
                    Ok(v) => {
                        let same = v
                            .data()
                            .iter()
                            .zip(node.value.data())
                            .all(|(a, b)| a.to_bits() == b.to_bits());
                        if !same {
                            return false;
                        }
                    }
                    Err(_) => return false,
                }
            }
        }
        true
    }
}

// ---------------------------------------------------------------------------
// Forward kernels, generic over the scalar type.
// ---------------------------------------------------------------------------

/// Minimal float abstraction so the same kernels serve the f32 production
/// path and the f64 replay used by finite-difference oracles.
pub(crate) trait Flt: Copy + PartialOrd {
    fn zero() -> Self;
    fn one() -> Self;
    fn from_f32(x: f32) -> Self;
    fn from_usize(n: usize) -> Self;
    fn add(self, o: Self) -> Self;
    fn sub(self, o: Self) -> Self;
    fn mul(self, o: Self) -> Self;
    fn div(self, o: Self) -> Self;
    fn neg(self) -> Self;
    fn exp(self) -> Self;
    fn ln_1p(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn max(self, o: Self) -> Self;
}

macro_rules! impl_flt {
    ($t:ty) => {
        impl Flt for $t {
            fn zero() -> Self {
                0.0
            }
            fn one() -> Self {
                1.0
            }
            fn from_f32(x: f32) -> Self {
                x as $t
            }
            fn from_usize(n: usize) -> Self {
                n as $t
            }
            fn add(self, o: Self) -> Self {
                self + o
            }
            fn sub(self, o: Self) -> Self {
                self - o
            }
            fn mul(self, o: Self) -> Self {
                self * o
            }
            fn div(self, o: Self) -> Self {
                self / o
            }
            fn neg(self) -> Self {
                -self
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn ln_1p(self) -> Self {
                self.ln_1p()
            }
            fn tanh(self) -> Self {
                self.tanh()
            }
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            fn abs(self) -> Self {
                self.abs()
            }
            fn max(self, o: Self) -> Self {
                if self > o {
                    self
                } else {
                    o
                }
            }
        }
    };
}
impl_flt!(f32);
impl_flt!(f64);

fn sigmoid_val<F: Flt>(x: F) -> F {
    // 1 / (1 + e^-x), with the sign split for stability.
    if x >= F::zero() {
        let e = x.neg().exp();
        F::one().div(F::one().add(e))
    } else {
        let e = x.exp();
        e.div(F::one().add(e))
    }
}

fn softplus_val<F: Flt>(x: F) -> F {
    // max(x,0) + ln(1 + e^-|x|)
    x.max(F::zero()).add(x.abs().neg().exp().ln_1p())
}

struct Shaped<'a, F> {
    shape: &'a [usize],
    data: &'a [F],
}

struct Tensor64 {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor64 {
    fn from_f32(t: &Tensor) -> Self {
        Tensor64 {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&x| x as f64).collect(),
        }
    }
}

fn forward(
    kind: PrimitiveKind,
    inputs: &[&Tensor],
    attrs: &Attrs,
) -> Result<Tensor, AutodiffError>
where
    f32: Flt,
{
    let shaped: Vec<Shaped<'_, f32>> = inputs
        .iter()
        .map(|t| Shaped {
            shape: t.shape(),
            data: t.data(),
        })
        .collect();
    let (shape, data) = forward_impl::<f32>(kind, &shaped, attrs)?;
    Ok(Tensor::new(shape, data).expect("kernel produced consistent shape"))
}

fn forward_f64(
    kind: PrimitiveKind,
    inputs: &[&Tensor64],
    attrs: &Attrs,
) -> Result<Tensor64, AutodiffError> {
    let shaped: Vec<Shaped<'_, f64>> = inputs
        .iter()
        .map(|t| Shaped {
            shape: &t.shape,
            data: &t.data,
        })
        .collect();
    let (shape, data) = forward_impl::<f64>(kind, &shaped, attrs)?;
    Ok(Tensor64 { shape, data })
}

#[allow(clippy::too_many_lines)]
fn forward_impl<F: Flt>(
    kind: PrimitiveKind,
    inputs: &[Shaped<'_, F>],
    attrs: &Attrs,
) -> Result<(Vec<usize>, Vec<F>), AutodiffError> {
    use PrimitiveKind::*;
    let arity = |expected: &'static str, ok: bool| {
        if ok {
            Ok(())
        } else {
            Err(AutodiffError::Arity {
                primitive: kind.name(),
                expected,
                got: inputs.len(),
            })
        }
    };
    match kind {
        MatMul => {
            arity("2", inputs.len() == 2)?;
            let (a, b) = (&inputs[0], &inputs[1]);
            if a.shape.len() != 2 || b.shape.len() != 2 {
                return Err(shape_err(
                    "matmul",
                    format!("requires 2-d operands, got {:?} and {:?}", a.shape, b.shape),
                ));
            }
            let (m, k) = (a.shape[0], a.shape[1]);
            let (k2, n) = (b.shape[0], b.shape[1]);
            if k != k2 {
                return Err(shape_err(
                    "matmul",
                    format!("inner dimensions differ: {:?} x {:?}", a.shape, b.shape),
                ));
            }
            let mut out = vec![F::zero(); m * n];
            for i in 0..m {
                for p in 0..k {
                    let av = a.data[i * k + p];
                    let row = &b.data[p * n..(p + 1) * n];
                    let dst = &mut out[i * n..(i + 1) * n];
                    for (d, &bv) in dst.iter_mut().zip(row) {
                        *d = d.add(av.mul(bv));
                    }
                }
            }
            Ok((vec![m, n], out))
        }
        Add => {
            arity("2", inputs.len() == 2)?;
            let (a, b) = (&inputs[0], &inputs[1]);
            if a.shape != b.shape {
                return Err(shape_err(
                    "add",
                    format!("operand shapes differ: {:?} vs {:?} (no implicit broadcast)", a.shape, b.shape),
                ));
            }
            let data = a
                .data
                .iter()
                .zip(b.data)
                .map(|(&x, &y)| x.add(y))
                .collect();
            Ok((a.shape.to_vec(), data))
        }
        Scale => {
            arity("1", inputs.len() == 1)?;
            let f = F::from_f32(attrs.factor);
            let data = inputs[0].data.iter().map(|&x| x.mul(f)).collect();
            Ok((inputs[0].shape.to_vec(), data))
        }
        Relu => {
            arity("1", inputs.len() == 1)?;
            let data = inputs[0].data.iter().map(|&x| x.max(F::zero())).collect();
            Ok((inputs[0].shape.to_vec(), data))
        }
        Tanh => {
            arity("1", inputs.len() == 1)?;
            let data = inputs[0].data.iter().map(|&x| x.tanh()).collect();
            Ok((inputs[0].shape.to_vec(), data))
        }
        Sigmoid => {
            arity("1", inputs.len() == 1)?;
            let data = inputs[0].data.iter().map(|&x| sigmoid_val(x)).collect();
            Ok((inputs[0].shape.to_vec(), data))
        }
        Softplus => {
            arity("1", inputs.len() == 1)?;
            let data = inputs[0].data.iter().map(|&x| softplus_val(x)).collect();
            Ok((inputs[0].shape.to_vec(), data))
        }
        Sqrt => {
            arity("1", inputs.len() == 1)?;
            let data = inputs[0].data.iter().map(|&x| x.sqrt()).collect();
            Ok((inputs[0].shape.to_vec(), data))
        }
        Conv2d => {
            arity("2 or 3", inputs.len() == 2 || inputs.len() == 3)?;
            conv2d_fwd(inputs, attrs)
        }
        ConvTranspose2d => {
            arity("2 or 3", inputs.len() == 2 || inputs.len() == 3)?;
            conv_transpose2d_fwd(inputs, attrs)
        }
        NearestUpsample2x => {
            arity("1", inputs.len() == 1)?;
            let x = &inputs[0];
            if x.shape.len() != 3 {
                return Err(shape_err(
                    "nearest_upsample2x",
                    format!("requires [C,H,W] input, got {:?}", x.shape),
                ));
            }
            let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
            let mut out = vec![F::zero(); c * 4 * h * w];
            let (oh, ow) = (2 * h, 2 * w);
            for ci in 0..c {
                for y in 0..oh {
                    for xo in 0..ow {
                        out[ci * oh * ow + y * ow + xo] =
                            x.data[ci * h * w + (y / 2) * w + (xo / 2)];
                    }
                }
            }
            Ok((vec![c, oh, ow], out))
        }
        Mean => {
            arity("1", inputs.len() == 1)?;
            let n = inputs[0].data.len();
            if n == 0 {
                return Err(shape_err("mean", "empty input".to_string()));
            }
            let mut acc = F::zero();
            for &x in inputs[0].data {
                acc = acc.add(x);
            }
            Ok((vec![1], vec![acc.div(F::from_usize(n))]))
        }
        Variance => {
            arity("1", inputs.len() == 1)?;
            let n = inputs[0].data.len();
            if n == 0 {
                return Err(shape_err("variance", "empty input".to_string()));
            }
            let nf = F::from_usize(n);
            let mut mu = F::zero();
            for &x in inputs[0].data {
                mu = mu.add(x);
            }
            mu = mu.div(nf);
            let mut acc = F::zero();
            for &x in inputs[0].data {
                let d = x.sub(mu);
                acc = acc.add(d.mul(d));
            }
            Ok((vec![1], vec![acc.div(nf)]))
        }
        L2NormSq => {
            arity("1", inputs.len() == 1)?;
            let mut acc = F::zero();
            for &x in inputs[0].data {
                acc = acc.add(x.mul(x));
            }
            Ok((vec![1], vec![acc]))
        }
        ElementwiseMul => {
            arity("2", inputs.len() == 2)?;
            let (a, b) = (&inputs[0], &inputs[1]);
            if a.shape != b.shape {
                return Err(shape_err(
                    "elementwise_mul",
                    format!("operand shapes differ: {:?} vs {:?}", a.shape, b.shape),
                ));
            }
            let data = a
                .data
                .iter()
                .zip(b.data)
                .map(|(&x, &y)| x.mul(y))
                .collect();
            Ok((a.shape.to_vec(), data))
        }
        Concat => {
            arity("1 or more", !inputs.is_empty())?;
            let axis = attrs.axis;
            let first = inputs[0].shape;
            if axis >= first.len() {
                return Err(shape_err(
                    "concat",
                    format!("axis {axis} out of range for rank {}", first.len()),
                ));
            }
            let mut axis_total = 0usize;
            for inp in inputs {
                if inp.shape.len() != first.len() {
                    return Err(shape_err(
                        "concat",
                        format!("rank mismatch: {:?} vs {:?}", first, inp.shape),
                    ));
                }
                for (d, (&a, &b)) in first.iter().zip(inp.shape).enumerate() {
                    if d != axis && a != b {
                        return Err(shape_err(
                            "concat",
                            format!("non-axis dims differ: {first:?} vs {:?}", inp.shape),
                        ));
                    }
                }
                axis_total += inp.shape[axis];
            }
            let mut out_shape = first.to_vec();
            out_shape[axis] = axis_total;
            let outer: usize = first[..axis].iter().product();
            let inner: usize = first[axis + 1..].iter().product();
            let total: usize = out_shape.iter().product();
            let mut out = vec![F::zero(); total];
            let mut axis_off = 0usize;
            for inp in inputs {
                let a_len = inp.shape[axis];
                for o in 0..outer {
                    let src = &inp.data[o * a_len * inner..(o + 1) * a_len * inner];
                    let dst_start = o * axis_total * inner + axis_off * inner;
                    out[dst_start..dst_start + a_len * inner].copy_from_slice(src);
                }
                axis_off += a_len;
            }
            Ok((out_shape, out))
        }
        Reshape => {
            arity("1", inputs.len() == 1)?;
            let n: usize = attrs.shape.iter().product();
            if n != inputs[0].data.len() {
                return Err(shape_err(
                    "reshape",
                    format!(
                        "cannot reshape {:?} ({} elements) to {:?} ({n} elements)",
                        inputs[0].shape,
                        inputs[0].data.len(),
                        attrs.shape
                    ),
                ));
            }
            Ok((attrs.shape.clone(), inputs[0].data.to_vec()))
        }
        InstanceNorm => {
            arity("3", inputs.len() == 3)?;
            instance_norm_fwd(inputs, attrs)
        }
        LogSoftmax => {
            arity("1", inputs.len() == 1)?;
            let x = &inputs[0];
            if x.shape.len() != 2 {
                return Err(shape_err(
                    "log_softmax",
                    format!("requires [rows, classes] input, got {:?}", x.shape),
                ));
            }
            let (rows, cols) = (x.shape[0], x.shape[1]);
            let mut out = vec![F::zero(); rows * cols];
            for r in 0..rows {
                let row = &x.data[r * cols..(r + 1) * cols];
                let mut mx = row[0];
                for &v in row {
                    mx = mx.max(v);
                }
                let mut denom = F::zero();
                for &v in row {
                    denom = denom.add(v.sub(mx).exp());
                }
                // ln(denom) = ln1p(denom - 1)
                let ln_denom = denom.sub(F::one()).ln_1p();
                for (o, &v) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                    *o = v.sub(mx).sub(ln_denom);
                }
            }
            Ok((x.shape.to_vec(), out))
        }
    }
}

/// Valid output-index range (inclusive) such that
/// `0 <= out * stride + k_off - pad < in_size`.
fn out_range(in_size: usize, k_off: usize, stride: usize, pad: usize, out_size: usize) -> (usize, usize) {
    let s = stride as i64;
    let lo_num = pad as i64 - k_off as i64;
    let lo = if lo_num <= 0 { 0 } else { (lo_num + s - 1) / s };
    let hi_num = in_size as i64 - 1 + pad as i64 - k_off as i64;
    if hi_num < 0 {
        return (1, 0); // empty
    }
    let hi = (hi_num / s).min(out_size as i64 - 1);
    if hi < lo {
        (1, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

/// Dot product with a fixed 8-lane accumulation order (lane l sums
/// indices congruent to l mod 8 within full chunks, then a sequential
/// tail, then a fixed combine tree). The order never varies between
/// calls, so results are bit-reproducible on one platform.
fn dot_lanes<F: Flt>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [F::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let ao = &a[c * 8..c * 8 + 8];
        let bo = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            lanes[l] = lanes[l].add(ao[l].mul(bo[l]));
        }
    }
    let mut tail = F::zero();
    for i in chunks * 8..a.len() {
        tail = tail.add(a[i].mul(b[i]));
    }
    let s01 = lanes[0].add(lanes[1]);
    let s23 = lanes[2].add(lanes[3]);
    let s45 = lanes[4].add(lanes[5]);
    let s67 = lanes[6].add(lanes[7]);
    s01.add(s23).add(s45.add(s67)).add(tail)
}

/// Gather conv patches into a [out_pos, ci*kh*kw] matrix (zero padding).
/// Valid kx runs are precomputed per output column, so patch rows move as
/// contiguous copies with no per-element branching.
#[allow(clippy::too_many_arguments)]
fn im2col<F: Flt>(
    x: &[F],
    ci_n: usize,
    h: usize,
    wid: usize,
    kh: usize,
    kw: usize,
    s: usize,
    p: usize,
    oh: usize,
    ow: usize,
) -> Vec<F> {
    let k_len = ci_n * kh * kw;
    let mut cols = vec![F::zero(); oh * ow * k_len];
    let runs = kx_runs(wid, kw, s, p, ow);
    for oy in 0..oh {
        for ci in 0..ci_n {
            let plane = &x[ci * h * wid..(ci + 1) * h * wid];
            for ky in 0..kh {
                let iy = oy * s + ky;
                if iy < p || iy - p >= h {
                    continue;
                }
                let row = &plane[(iy - p) * wid..(iy - p + 1) * wid];
                let k0 = (ci * kh + ky) * kw;
                for (ox, &(kx_lo, len, ix0)) in runs.iter().enumerate() {
                    if len == 0 {
                        continue;
                    }
                    let dst = (oy * ow + ox) * k_len + k0 + kx_lo;
                    cols[dst..dst + len].copy_from_slice(&row[ix0..ix0 + len]);
                }
            }
        }
    }
    cols
}

/// Per output column: (first valid kx, run length, first input x).
fn kx_runs(wid: usize, kw: usize, s: usize, p: usize, ow: usize) -> Vec<(usize, usize, usize)> {
    (0..ow)
        .map(|ox| {
            let base = (ox * s) as i64 - p as i64;
            let kx_lo = (-base).max(0) as usize;
            let kx_hi = ((wid as i64 - base).min(kw as i64)).max(0) as usize;
            if kx_hi <= kx_lo {
                (0, 0, 0)
            } else {
                (kx_lo, kx_hi - kx_lo, (base + kx_lo as i64) as usize)
            }
        })
        .collect()
}

/// Scatter-add a column matrix back onto the input layout.
#[allow(clippy::too_many_arguments)]
fn col2im_add(
    dcols: &[f32],
    dx: &mut [f32],
    ci_n: usize,
    h: usize,
    wid: usize,
    kh: usize,
    kw: usize,
    s: usize,
    p: usize,
    oh: usize,
    ow: usize,
) {
    let k_len = ci_n * kh * kw;
    let runs = kx_runs(wid, kw, s, p, ow);
    for oy in 0..oh {
        for ci in 0..ci_n {
            let plane = &mut dx[ci * h * wid..(ci + 1) * h * wid];
            for ky in 0..kh {
                let iy = oy * s + ky;
                if iy < p || iy - p >= h {
                    continue;
                }
                let row = &mut plane[(iy - p) * wid..(iy - p + 1) * wid];
                let k0 = (ci * kh + ky) * kw;
                for (ox, &(kx_lo, len, ix0)) in runs.iter().enumerate() {
                    if len == 0 {
                        continue;
                    }
                    let src = (oy * ow + ox) * k_len + k0 + kx_lo;
                    for (d, c) in row[ix0..ix0 + len].iter_mut().zip(&dcols[src..src + len]) {
                        *d += *c;
                    }
                }
            }
        }
    }
}

fn conv2d_dims(
    x_shape: &[usize],
    w_shape: &[usize],
    attrs: &Attrs,
) -> Result<(usize, usize, usize, usize, usize, usize, usize, usize), AutodiffError> {
    if x_shape.len() != 3 || w_shape.len() != 4 {
        return Err(shape_err(
            "conv2d",
            format!("requires x=[C,H,W], w=[Co,Ci,kh,kw]; got {x_shape:?} and {w_shape:?}"),
        ));
    }
    let (ci, h, w) = (x_shape[0], x_shape[1], x_shape[2]);
    let (co, ci2, kh, kw) = (w_shape[0], w_shape[1], w_shape[2], w_shape[3]);
    if ci != ci2 {
        return Err(shape_err(
            "conv2d",
            format!("input channels {ci} != kernel channels {ci2}"),
        ));
    }
    let (s, p) = (attrs.stride, attrs.padding);
    if s == 0 {
        return Err(shape_err("conv2d", "stride must be positive".to_string()));
    }
    if h + 2 * p < kh || w + 2 * p < kw {
        return Err(shape_err(
            "conv2d",
            format!("kernel {kh}x{kw} larger than padded input {h}x{w} (pad {p})"),
        ));
    }
    let oh = (h + 2 * p - kh) / s + 1;
    let ow = (w + 2 * p - kw) / s + 1;
    Ok((ci, h, w, co, kh, kw, oh, ow))
}

fn conv2d_fwd<F: Flt>(
    inputs: &[Shaped<'_, F>],
    attrs: &Attrs,
) -> Result<(Vec<usize>, Vec<F>), AutodiffError> {
    let x = &inputs[0];
    let w = &inputs[1];
    let (ci_n, h, wid, co_n, kh, kw, oh, ow) = conv2d_dims(x.shape, w.shape, attrs)?;
    if let Some(b) = inputs.get(2) {
        if b.shape != [co_n] {
            return Err(shape_err(
                "conv2d",
                format!("bias shape {:?} != [{co_n}]", b.shape),
            ));
        }
    }
    let (s, p) = (attrs.stride, attrs.padding);
    let mut out = vec![F::zero(); co_n * oh * ow];
    if let Some(b) = inputs.get(2) {
        for co in 0..co_n {
            let bv = b.data[co];
            for o in out[co * oh * ow..(co + 1) * oh * ow].iter_mut() {
                *o = bv;
            }
        }
    }
    if s == 1 {
        // Unit stride: accumulate rows directly; contiguous on both sides.
        for co in 0..co_n {
            for ci in 0..ci_n {
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = out_range(h, ky, 1, p, oh);
                    if oy_lo > oy_hi {
                        continue;
                    }
                    for kx in 0..kw {
                        let (ox_lo, ox_hi) = out_range(wid, kx, 1, p, ow);
                        if ox_lo > ox_hi {
                            continue;
                        }
                        let wv = w.data[((co * ci_n + ci) * kh + ky) * kw + kx];
                        let ix0 = ox_lo + kx - p;
                        for oy in oy_lo..=oy_hi {
                            let iy = oy + ky - p;
                            let xrow = &x.data[(ci * h + iy) * wid + ix0..];
                            let orow = &mut out
                                [(co * oh + oy) * ow + ox_lo..(co * oh + oy) * ow + ox_hi + 1];
                            for (o, xv) in orow.iter_mut().zip(xrow.iter()) {
                                *o = o.add(wv.mul(*xv));
                            }
                        }
                    }
                }
            }
        }
    } else {
        let k_len = ci_n * kh * kw;
        let cols = im2col(x.data, ci_n, h, wid, kh, kw, s, p, oh, ow);
        for co in 0..co_n {
            // w[Co,Ci,kh,kw] rows are already contiguous in ci*kh*kw order.
            let wrow = &w.data[co * k_len..(co + 1) * k_len];
            let outp = &mut out[co * oh * ow..(co + 1) * oh * ow];
            for (pos, o) in outp.iter_mut().enumerate() {
                *o = o.add(dot_lanes(wrow, &cols[pos * k_len..(pos + 1) * k_len]));
            }
        }
    }
    Ok((vec![co_n, oh, ow], out))
}

fn conv_transpose2d_dims(
    x_shape: &[usize],
    w_shape: &[usize],
    attrs: &Attrs,
) -> Result<(usize, usize, usize, usize, usize, usize, usize, usize), AutodiffError> {
    if x_shape.len() != 3 || w_shape.len() != 4 {
        return Err(shape_err(
            "conv_transpose2d",
            format!("requires x=[Ci,H,W], w=[Ci,Co,kh,kw]; got {x_shape:?} and {w_shape:?}"),
        ));
    }
    let (ci, h, w) = (x_shape[0], x_shape[1], x_shape[2]);
    let (ci2, co, kh, kw) = (w_shape[0], w_shape[1], w_shape[2], w_shape[3]);
    if ci != ci2 {
        return Err(shape_err(
            "conv_transpose2d",
            format!("input channels {ci} != kernel channels {ci2}"),
        ));
    }
    let (s, p) = (attrs.stride, attrs.padding);
    if s == 0 {
        return Err(shape_err(
            "conv_transpose2d",
            "stride must be positive".to_string(),
        ));
    }
    let oh_i = (h as i64 - 1) * s as i64 - 2 * p as i64 + kh as i64;
    let ow_i = (w as i64 - 1) * s as i64 - 2 * p as i64 + kw as i64;
    if oh_i <= 0 || ow_i <= 0 {
        return Err(shape_err(
            "conv_transpose2d",
            format!("non-positive output size for input {h}x{w}, kernel {kh}x{kw}, stride {s}, pad {p}"),
        ));
    }
    Ok((ci, h, w, co, kh, kw, oh_i as usize, ow_i as usize))
}

fn conv_transpose2d_fwd<F: Flt>(
    inputs: &[Shaped<'_, F>],
    attrs: &Attrs,
) -> Result<(Vec<usize>, Vec<F>), AutodiffError> {
    let x = &inputs[0];
    let w = &inputs[1];
    let (ci_n, h, wid, co_n, kh, kw, oh, ow) = conv_transpose2d_dims(x.shape, w.shape, attrs)?;
    if let Some(b) = inputs.get(2) {
        if b.shape != [co_n] {
            return Err(shape_err(
                "conv_transpose2d",
                format!("bias shape {:?} != [{co_n}]", b.shape),
            ));
        }
    }
    let (s, p) = (attrs.stride, attrs.padding);
    let mut out = vec![F::zero(); co_n * oh * ow];
    if let Some(b) = inputs.get(2) {
        for co in 0..co_n {
            let bv = b.data[co];
            for o in out[co * oh * ow..(co + 1) * oh * ow].iter_mut() {
                *o = bv;
            }
        }
    }
    // out[co, iy*s+ky-p, ix*s+kx-p] += x[ci, iy, ix] * w[ci, co, ky, kx]
    for ci in 0..ci_n {
        for co in 0..co_n {
            for ky in 0..kh {
                let (iy_lo, iy_hi) = out_range(oh, ky, s, p, h);
                if iy_lo > iy_hi {
                    continue;
                }
                for kx in 0..kw {
                    let (ix_lo, ix_hi) = out_range(ow, kx, s, p, wid);
                    if ix_lo > ix_hi {
                        continue;
                    }
                    let wv = w.data[((ci * co_n + co) * kh + ky) * kw + kx];
                    let ox0 = ix_lo * s + kx - p;
                    for iy in iy_lo..=iy_hi {
                        let oy = iy * s + ky - p;
                        let xrow = &x.data[(ci * h + iy) * wid + ix_lo..(ci * h + iy) * wid + ix_hi + 1];
                        let orow = &mut out[(co * oh + oy) * ow + ox0..(co * oh + oy + 1) * ow];
                        for (xv, o) in xrow.iter().zip(orow.iter_mut().step_by(s)) {
                            *o = o.add(wv.mul(*xv));
                        }
                    }
                }
            }
        }
    }
    Ok((vec![co_n, oh, ow], out))
}

fn instance_norm_check(
    x_shape: &[usize],
    g_shape: &[usize],
    b_shape: &[usize],
) -> Result<(usize, usize, usize, bool), AutodiffError> {
    if x_shape.len() != 3 {
        return Err(shape_err(
            "instance_norm",
            format!("requires x=[C,H,W], got {x_shape:?}"),
        ));
    }
    let (c, h, w) = (x_shape[0], x_shape[1], x_shape[2]);
    let full = g_shape == x_shape;
    let per_channel = g_shape == [c];
    if !(full || per_channel) {
        return Err(shape_err(
            "instance_norm",
            format!("gamma shape {g_shape:?} must be [{c}] or {x_shape:?}"),
        ));
    }
    if b_shape != g_shape {
        return Err(shape_err(
            "instance_norm",
            format!("beta shape {b_shape:?} must match gamma shape {g_shape:?}"),
        ));
    }
    Ok((c, h, w, full))
}

fn instance_norm_fwd<F: Flt>(
    inputs: &[Shaped<'_, F>],
    attrs: &Attrs,
) -> Result<(Vec<usize>, Vec<F>), AutodiffError> {
    let (x, g, b) = (&inputs[0], &inputs[1], &inputs[2]);
    let (c, h, w, full) = instance_norm_check(x.shape, g.shape, b.shape)?;
    let n = h * w;
    let nf = F::from_usize(n);
    let eps = F::from_f32(attrs.epsilon);
    let mut out = vec![F::zero(); c * n];
    for ch in 0..c {
        let xs = &x.data[ch * n..(ch + 1) * n];
        let mut mu = F::zero();
        for &v in xs {
            mu = mu.add(v);
        }
        mu = mu.div(nf);
        let mut var = F::zero();
        for &v in xs {
            let d = v.sub(mu);
            var = var.add(d.mul(d));
        }
        var = var.div(nf);
        let inv_std = F::one().div(var.add(eps).sqrt());
        let os = &mut out[ch * n..(ch + 1) * n];
        for (i, (&v, o)) in xs.iter().zip(os.iter_mut()).enumerate() {
            let xhat = v.sub(mu).mul(inv_std);
            let (gv, bv) = if full {
                (g.data[ch * n + i], b.data[ch * n + i])
            } else {
                (g.data[ch], b.data[ch])
            };
            *o = gv.mul(xhat).add(bv);
        }
    }
    Ok((x.shape.to_vec(), out))
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

/// Gradients with respect to each input of one primitive application.
/// `needs[i] == false` skips the corresponding computation entirely.
fn backward_prim(
    kind: PrimitiveKind,
    inputs: &[&Tensor],
    attrs: &Attrs,
    output: &Tensor,
    grad: &Tensor,
    needs: &[bool],
) -> Vec<Option<Tensor>> {
    use PrimitiveKind::*;
    let mut out: Vec<Option<Tensor>> = vec![None; inputs.len()];
    match kind {
        MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            let g = grad.data();
            if needs[0] {
                // da = g . b^T
                let mut da = vec![0.0f32; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let gv = g[i * n + j];
                        let brow = &b.data()[j..]; // b[p][j] strided
                        let dst = &mut da[i * k..(i + 1) * k];
                        for (p, d) in dst.iter_mut().enumerate() {
                            *d += gv * brow[p * n];
                        }
                    }
                }
                out[0] = Some(Tensor::new(vec![m, k], da).unwrap());
            }
            if needs[1] {
                // db = a^T . g
                let mut db = vec![0.0f32; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let av = a.data()[i * k + p];
                        let gr = &g[i * n..(i + 1) * n];
                        let dst = &mut db[p * n..(p + 1) * n];
                        for (d, &gv) in dst.iter_mut().zip(gr) {
                            *d += av * gv;
                        }
                    }
                }
                out[1] = Some(Tensor::new(vec![k, n], db).unwrap());
            }
        }
        Add => {
            for slot in 0..2 {
                if needs[slot] {
                    out[slot] = Some(grad.clone());
                }
            }
        }
        Scale => {
            if needs[0] {
                out[0] = Some(grad.map(|g| g * attrs.factor));
            }
        }
        Relu => {
            if needs[0] {
                // Subgradient at exactly 0 is 0 by convention.
                let data = grad
                    .data()
                    .iter()
                    .zip(inputs[0].data())
                    .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                out[0] = Some(Tensor::new(inputs[0].shape().to_vec(), data).unwrap());
            }
        }
        Tanh => {
            if needs[0] {
                let data = grad
                    .data()
                    .iter()
                    .zip(output.data())
                    .map(|(&g, &y)| g * (1.0 - y * y))
                    .collect();
                out[0] = Some(Tensor::new(inputs[0].shape().to_vec(), data).unwrap());
            }
        }
        Sigmoid => {
            if needs[0] {
                let data = grad
                    .data()
                    .iter()
                    .zip(output.data())
                    .map(|(&g, &y)| g * y * (1.0 - y))
                    .collect();
                out[0] = Some(Tensor::new(inputs[0].shape().to_vec(), data).unwrap());
            }
        }
        Softplus => {
            if needs[0] {
                let data = grad
                    .data()
                    .iter()
                    .zip(inputs[0].data())
                    .map(|(&g, &x)| g * sigmoid_val(x))
                    .collect();
                out[0] = Some(Tensor::new(inputs[0].shape().to_vec(), data).unwrap());
            }
        }
        Sqrt => {
            if needs[0] {
                let data = grad
                    .data()
                    .iter()
                    .zip(output.data())
                    .map(|(&g, &y)| g / (2.0 * y))
                    .collect();
                out[0] = Some(Tensor::new(inputs[0].shape().to_vec(), data).unwrap());
            }
        }
        Conv2d => {
            conv2d_bwd(inputs, attrs, grad, needs, &mut out);
        }
        ConvTranspose2d => {
            conv_transpose2d_bwd(inputs, attrs, grad, needs, &mut out);
        }
        NearestUpsample2x => {
            if needs[0] {
                let x = inputs[0];
                let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let (oh, ow) = (2 * h, 2 * w);
                let g = grad.data();
                let mut dx = vec![0.0f32; c * h * w];
                for ci in 0..c {
                    for y in 0..oh {
                        for xo in 0..ow {
                            dx[ci * h * w + (y / 2) * w + (xo / 2)] +=
                                g[ci * oh * ow + y * ow + xo];
                        }
                    }
                }
                out[0] = Some(Tensor::new(x.shape().to_vec(), dx).unwrap());
            }
        }
        Mean => {
            if needs[0] {
                let n = inputs[0].numel() as f32;
                let gv = grad.data()[0] / n;
                out[0] = Some(Tensor::full(inputs[0].shape(), gv));
            }
        }
        Variance => {
            if needs[0] {
                let n = inputs[0].numel() as f32;
                let mut mu = 0.0f32;
                for &x in inputs[0].data() {
                    mu += x;
                }
                mu /= n;
                let gv = grad.data()[0];
                let data = inputs[0]
                    .data()
                    .iter()
                    .map(|&x| gv * 2.0 * (x - mu) / n)
                    .collect();
                out[0] = Some(Tensor::new(inputs[0].shape().to_vec(), data).unwrap());
            }
        }
        L2NormSq => {
            if needs[0] {
                let gv = grad.data()[0];
                let data = inputs[0].data().iter().map(|&x| gv * 2.0 * x).collect();
                out[0] = Some(Tensor::new(inputs[0].shape().to_vec(), data).unwrap());
            }
        }
        ElementwiseMul => {
            if needs[0] {
                let data = grad
                    .data()
                    .iter()
                    .zip(inputs[1].data())
                    .map(|(&g, &y)| g * y)
                    .collect();
                out[0] = Some(Tensor::new(inputs[0].shape().to_vec(), data).unwrap());
            }
            if needs[1] {
                let data = grad
                    .data()
                    .iter()
                    .zip(inputs[0].data())
                    .map(|(&g, &x)| g * x)
                    .collect();
                out[1] = Some(Tensor::new(inputs[1].shape().to_vec(), data).unwrap());
            }
        }
        Concat => {
            let axis = attrs.axis;
            let out_shape = output.shape();
            let outer: usize = out_shape[..axis].iter().product();
            let inner: usize = out_shape[axis + 1..].iter().product();
            let axis_total = out_shape[axis];
            let mut axis_off = 0usize;
            for (slot, inp) in inputs.iter().enumerate() {
                let a_len = inp.shape()[axis];
                if needs[slot] {
                    let mut dx = vec![0.0f32; inp.numel()];
                    for o in 0..outer {
                        let src_start = o * axis_total * inner + axis_off * inner;
                        dx[o * a_len * inner..(o + 1) * a_len * inner]
                            .copy_from_slice(&grad.data()[src_start..src_start + a_len * inner]);
                    }
                    out[slot] = Some(Tensor::new(inp.shape().to_vec(), dx).unwrap());
                }
                axis_off += a_len;
            }
        }
        Reshape => {
            if needs[0] {
                out[0] = Some(
                    Tensor::new(inputs[0].shape().to_vec(), grad.data().to_vec()).unwrap(),
                );
            }
        }
        InstanceNorm => {
            instance_norm_bwd(inputs, attrs, grad, needs, &mut out);
        }
        LogSoftmax => {
            if needs[0] {
                let x = inputs[0];
                let (rows, cols) = (x.shape()[0], x.shape()[1]);
                let g = grad.data();
                let y = output.data();
                let mut dx = vec![0.0f32; rows * cols];
                for r in 0..rows {
                    let mut gsum = 0.0f32;
                    for c in 0..cols {
                        gsum += g[r * cols + c];
                    }
                    for c in 0..cols {
                        let idx = r * cols + c;
                        dx[idx] = g[idx] - y[idx].exp() * gsum;
                    }
                }
                out[0] = Some(Tensor::new(x.shape().to_vec(), dx).unwrap());
            }
        }
    }
    out
}

fn conv2d_bwd(
    inputs: &[&Tensor],
    attrs: &Attrs,
    grad: &Tensor,
    needs: &[bool],
    out: &mut [Option<Tensor>],
) {
    let x = inputs[0];
    let w = inputs[1];
    let (ci_n, h, wid, co_n, kh, kw, oh, ow) =
        conv2d_dims(x.shape(), w.shape(), attrs).expect("shapes validated at forward");
    let (s, p) = (attrs.stride, attrs.padding);
    let g = grad.data();
    let k_len = ci_n * kh * kw;
    let ohw = oh * ow;
    if needs[0] {
        let mut dx = vec![0.0f32; ci_n * h * wid];
        if s == 1 {
            for co in 0..co_n {
                for ci in 0..ci_n {
                    for ky in 0..kh {
                        let (oy_lo, oy_hi) = out_range(h, ky, 1, p, oh);
                        if oy_lo > oy_hi {
                            continue;
                        }
                        for kx in 0..kw {
                            let (ox_lo, ox_hi) = out_range(wid, kx, 1, p, ow);
                            if ox_lo > ox_hi {
                                continue;
                            }
                            let wv = w.data()[((co * ci_n + ci) * kh + ky) * kw + kx];
                            let ix0 = ox_lo + kx - p;
                            for oy in oy_lo..=oy_hi {
                                let iy = oy + ky - p;
                                let grow = &g
                                    [(co * oh + oy) * ow + ox_lo..(co * oh + oy) * ow + ox_hi + 1];
                                let drow = &mut dx[(ci * h + iy) * wid + ix0..];
                                for (gv, d) in grow.iter().zip(drow.iter_mut()) {
                                    *d += wv * *gv;
                                }
                            }
                        }
                    }
                }
            }
        } else {
            // dcols[pos] += g[co][pos] * w[co], then scatter back.
            let mut dcols = vec![0.0f32; ohw * k_len];
            for co in 0..co_n {
                let wrow = &w.data()[co * k_len..(co + 1) * k_len];
                let gp = &g[co * ohw..(co + 1) * ohw];
                for (pos, &gv) in gp.iter().enumerate() {
                    let dc = &mut dcols[pos * k_len..(pos + 1) * k_len];
                    for (d, &wv) in dc.iter_mut().zip(wrow) {
                        *d += gv * wv;
                    }
                }
            }
            col2im_add(&dcols, &mut dx, ci_n, h, wid, kh, kw, s, p, oh, ow);
        }
        out[0] = Some(Tensor::new(x.shape().to_vec(), dx).unwrap());
    }
    if needs[1] {
        let mut dw = vec![0.0f32; co_n * k_len];
        if s == 1 {
            for co in 0..co_n {
                for ci in 0..ci_n {
                    for ky in 0..kh {
                        let (oy_lo, oy_hi) = out_range(h, ky, 1, p, oh);
                        if oy_lo > oy_hi {
                            continue;
                        }
                        for kx in 0..kw {
                            let (ox_lo, ox_hi) = out_range(wid, kx, 1, p, ow);
                            if ox_lo > ox_hi {
                                continue;
                            }
                            let ix0 = ox_lo + kx - p;
                            let mut acc = 0.0f32;
                            for oy in oy_lo..=oy_hi {
                                let iy = oy + ky - p;
                                let grow = &g
                                    [(co * oh + oy) * ow + ox_lo..(co * oh + oy) * ow + ox_hi + 1];
                                let xrow = &x.data()
                                    [(ci * h + iy) * wid + ix0..(ci * h + iy) * wid + ix0 + grow.len()];
                                acc += dot_lanes(grow, xrow);
                            }
                            dw[((co * ci_n + ci) * kh + ky) * kw + kx] = acc;
                        }
                    }
                }
            }
        } else {
            let cols = im2col(x.data(), ci_n, h, wid, kh, kw, s, p, oh, ow);
            for co in 0..co_n {
                let gp = &g[co * ohw..(co + 1) * ohw];
                let dwrow = &mut dw[co * k_len..(co + 1) * k_len];
                for (pos, &gv) in gp.iter().enumerate() {
                    let col = &cols[pos * k_len..(pos + 1) * k_len];
                    for (d, &cv) in dwrow.iter_mut().zip(col) {
                        *d += gv * cv;
                    }
                }
            }
        }
        out[1] = Some(Tensor::new(w.shape().to_vec(), dw).unwrap());
    }
    if inputs.len() == 3 && needs[2] {
        let mut db = vec![0.0f32; co_n];
        for co in 0..co_n {
            let mut acc = 0.0f32;
            for &gv in &g[co * ohw..(co + 1) * ohw] {
                acc += gv;
            }
            db[co] = acc;
        }
        out[2] = Some(Tensor::from_vec(db));
    }
}

fn conv_transpose2d_bwd(
    inputs: &[&Tensor],
    attrs: &Attrs,
    grad: &Tensor,
    needs: &[bool],
    out: &mut [Option<Tensor>],
) {
    let x = inputs[0];
    let w = inputs[1];
    let (ci_n, h, wid, co_n, kh, kw, oh, ow) =
        conv_transpose2d_dims(x.shape(), w.shape(), attrs).expect("shapes validated at forward");
    let (s, p) = (attrs.stride, attrs.padding);
    let g = grad.data();
    if needs[0] {
        let mut dx = vec![0.0f32; ci_n * h * wid];
        for ci in 0..ci_n {
            for co in 0..co_n {
                for ky in 0..kh {
                    let (iy_lo, iy_hi) = out_range(oh, ky, s, p, h);
                    if iy_lo > iy_hi {
                        continue;
                    }
                    for kx in 0..kw {
                        let (ix_lo, ix_hi) = out_range(ow, kx, s, p, wid);
                        if ix_lo > ix_hi {
                            continue;
                        }
                        let wv = w.data()[((ci * co_n + co) * kh + ky) * kw + kx];
                        let ox0 = ix_lo * s + kx - p;
                        for iy in iy_lo..=iy_hi {
                            let oy = iy * s + ky - p;
                            let grow = &g[(co * oh + oy) * ow + ox0..(co * oh + oy + 1) * ow];
                            let drow = &mut dx[(ci * h + iy) * wid + ix_lo..(ci * h + iy) * wid + ix_hi + 1];
                            for (d, gv) in drow.iter_mut().zip(grow.iter().step_by(s)) {
                                *d += wv * *gv;
                            }
                        }
                    }
                }
            }
        }
        out[0] = Some(Tensor::new(x.shape().to_vec(), dx).unwrap());
    }
    if needs[1] {
        let mut dw = vec![0.0f32; ci_n * co_n * kh * kw];
        for ci in 0..ci_n {
            for co in 0..co_n {
                for ky in 0..kh {
                    let (iy_lo, iy_hi) = out_range(oh, ky, s, p, h);
                    if iy_lo > iy_hi {
                        continue;
                    }
                    for kx in 0..kw {
                        let (ix_lo, ix_hi) = out_range(ow, kx, s, p, wid);
                        if ix_lo > ix_hi {
                            continue;
                        }
                        let mut acc = 0.0f32;
                        let ox0 = ix_lo * s + kx - p;
                        for iy in iy_lo..=iy_hi {
                            let oy = iy * s + ky - p;
                            let grow = &g[(co * oh + oy) * ow + ox0..(co * oh + oy + 1) * ow];
                            let xrow = &x.data()[(ci * h + iy) * wid + ix_lo..(ci * h + iy) * wid + ix_hi + 1];
                            for (xv, gv) in xrow.iter().zip(grow.iter().step_by(s)) {
                                acc += *xv * *gv;
                            }
                        }
                        dw[((ci * co_n + co) * kh + ky) * kw + kx] = acc;
                    }
                }
            }
        }
        out[1] = Some(Tensor::new(w.shape().to_vec(), dw).unwrap());
    }
    if inputs.len() == 3 && needs[2] {
        let mut db = vec![0.0f32; co_n];
        for co in 0..co_n {
            let mut acc = 0.0f32;
            for &gv in &g[co * oh * ow..(co + 1) * oh * ow] {
                acc += gv;
            }
            db[co] = acc;
        }
        out[2] = Some(Tensor::from_vec(db));
    }
}

fn instance_norm_bwd(
    inputs: &[&Tensor],
    attrs: &Attrs,
    grad: &Tensor,
    needs: &[bool],
    out: &mut [Option<Tensor>],
) {
    let (x, gm, _bt) = (inputs[0], inputs[1], inputs[2]);
    let (c, h, w, full) =
        instance_norm_check(x.shape(), gm.shape(), inputs[2].shape()).expect("validated");
    let n = h * w;
    let nf = n as f32;
    let eps = attrs.epsilon;
    let g = grad.data();

    let mut dx = if needs[0] { vec![0.0f32; c * n] } else { Vec::new() };
    let mut dgamma = if needs[1] { vec![0.0f32; gm.numel()] } else { Vec::new() };
    let mut dbeta = if needs[2] { vec![0.0f32; gm.numel()] } else { Vec::new() };

    for ch in 0..c {
        let xs = &x.data()[ch * n..(ch + 1) * n];
        let gs = &g[ch * n..(ch + 1) * n];
        let mut mu = 0.0f32;
        for &v in xs {
            mu += v;
        }
        mu /= nf;
        let mut var = 0.0f32;
        for &v in xs {
            let d = v - mu;
            var += d * d;
        }
        var /= nf;
        let inv_std = 1.0 / (var + eps).sqrt();

        if needs[1] || needs[2] {
            for i in 0..n {
                let xhat = (xs[i] - mu) * inv_std;
                if full {
                    if needs[1] {
                        dgamma[ch * n + i] = gs[i] * xhat;
                    }
                    if needs[2] {
                        dbeta[ch * n + i] = gs[i];
                    }
                } else {
                    if needs[1] {
                        dgamma[ch] += gs[i] * xhat;
                    }
                    if needs[2] {
                        dbeta[ch] += gs[i];
                    }
                }
            }
        }

        if needs[0] {
            // ghat = g * gamma; dx = inv_std * (ghat - mean(ghat) - xhat * mean(ghat*xhat))
            let mut ghat_sum = 0.0f32;
            let mut ghat_xhat_sum = 0.0f32;
            let mut ghat = vec![0.0f32; n];
            for i in 0..n {
                let gv = if full { gm.data()[ch * n + i] } else { gm.data()[ch] };
                let gh = gs[i] * gv;
                ghat[i] = gh;
                ghat_sum += gh;
                ghat_xhat_sum += gh * (xs[i] - mu) * inv_std;
            }
            let ghat_mean = ghat_sum / nf;
            let ghat_xhat_mean = ghat_xhat_sum / nf;
            for i in 0..n {
                let xhat = (xs[i] - mu) * inv_std;
                dx[ch * n + i] = inv_std * (ghat[i] - ghat_mean - xhat * ghat_xhat_mean);
            }
        }
    }

    if needs[0] {
        out[0] = Some(Tensor::new(x.shape().to_vec(), dx).unwrap());
    }
    if needs[1] {
        out[1] = Some(Tensor::new(gm.shape().to_vec(), dgamma).unwrap());
    }
    if needs[2] {
        out[2] = Some(Tensor::new(gm.shape().to_vec(), dbeta).unwrap());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let i2 = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = tape.constant(Tensor::new(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = tape.matmul(i2, b).unwrap();
        assert_eq!(tape.value(c).data(), &[3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn relu_definition() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![-1.0, 0.0, 2.5]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.5]);
    }

    /// Brute-force transpose-convolution oracle: for every output position,
    /// enumerate all (input position, kernel tap) pairs that land on it.
    fn conv_transpose_oracle(
        x: &[f32],
        (ci_n, h, w): (usize, usize, usize),
        wt: &[f32],
        (co_n, kh, kw): (usize, usize, usize),
        stride: usize,
    ) -> Vec<f32> {
        let oh = (h - 1) * stride + kh;
        let ow = (w - 1) * stride + kw;
        let mut out = vec![0.0f32; co_n * oh * ow];
        for co in 0..co_n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f32;
                    for ci in 0..ci_n {
                        for iy in 0..h {
                            for ix in 0..w {
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        if iy * stride + ky == oy && ix * stride + kx == ox {
                                            acc += x[(ci * h + iy) * w + ix]
                                                * wt[((ci * co_n + co) * kh + ky) * kw + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    out[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_transpose_matches_bruteforce_oracle() {
        // 1-channel 2x2 input, 2x2 kernel of ones, stride 2 -> 4x4 output.
        let mut tape = Tape::new();
        let x_data = vec![1.0, 2.0, 3.0, 4.0];
        let x = tape.constant(Tensor::new(vec![1, 2, 2], x_data.clone()).unwrap());
        let w_data = vec![1.0; 4];
        let w = tape.constant(Tensor::new(vec![1, 1, 2, 2], w_data.clone()).unwrap());
        let y = tape.conv_transpose2d(x, w, None, 2, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 4, 4]);
        let expected = conv_transpose_oracle(&x_data, (1, 2, 2), &w_data, (1, 2, 2), 2);
        assert_eq!(tape.value(y).data(), expected.as_slice());

        // Randomized multi-channel case against the same oracle.
        let mut rng = crate::rng::DetRng::new(11);
        let x_t = rng.standard_normal_tensor(&[3, 4, 5]);
        let w_t = rng.standard_normal_tensor(&[3, 2, 3, 3]);
        let mut tape = Tape::new();
        let x = tape.constant(x_t.clone());
        let w = tape.constant(w_t.clone());
        let y = tape.conv_transpose2d(x, w, None, 2, 0).unwrap();
        let expected =
            conv_transpose_oracle(x_t.data(), (3, 4, 5), w_t.data(), (2, 3, 3), 2);
        for (a, b) in tape.value(y).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn backward_l2_norm_sq_is_2x() {
        let mut tape = Tape::new();
        let s = tape.variable(Tensor::from_vec(vec![1.0, 2.0]));
        let y = tape.l2_norm_sq(s).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(s).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_sum_relu_subgradient() {
        let mut tape = Tape::new();
        let s = tape.variable(Tensor::from_vec(vec![-1.0, 3.0]));
        let r = tape.relu(s).unwrap();
        let y = tape.sum(r).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(s).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let s = tape.variable(Tensor::from_vec(vec![1.0, 2.0]));
        let err = tape.backward(s).unwrap_err();
        assert!(matches!(err, AutodiffError::NonScalarOutput { .. }));
    }

    #[test]
    fn backward_rejects_detached_node() {
        let tape = Tape::new();
        let err = tape.backward(NodeId(3)).unwrap_err();
        assert!(matches!(err, AutodiffError::DetachedNode { .. }));
    }

    #[test]
    fn unknown_kind_is_an_error() {
        let err = PrimitiveKind::from_name("fused_frobnicate").unwrap_err();
        assert!(matches!(err, AutodiffError::UnknownKind(_)));
        assert_eq!(
            PrimitiveKind::from_name("conv_transpose2d").unwrap(),
            PrimitiveKind::ConvTranspose2d
        );
    }

    #[test]
    fn add_refuses_broadcast() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_vec(vec![1.0, 2.0]));
        let b = tape.constant(Tensor::scalar(1.0));
        let err = tape.add(a, b).unwrap_err();
        match err {
            AutodiffError::Shape { primitive, .. } => assert_eq!(primitive, "add"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn matmul_shape_error_names_dims() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[4, 2]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains('3') && msg.contains('4'), "{msg}");
    }

    #[test]
    fn replay_is_bit_exact() {
        let mut rng = crate::rng::DetRng::new(5);
        let mut tape = Tape::new();
        let x = tape.variable(rng.standard_normal_tensor(&[2, 8, 8]));
        let w = tape.constant(rng.standard_normal_tensor(&[3, 2, 3, 3]));
        let c = tape.conv2d(x, w, None, 2, 1).unwrap();
        let r = tape.relu(c).unwrap();
        let s = tape.sigmoid(r).unwrap();
        let _ = tape.mean(s).unwrap();
        assert!(tape.replays_bit_exactly());
    }

    #[test]
    fn constant_subgraphs_are_skipped() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::from_vec(vec![1.0, 2.0]));
        let c = tape.constant(Tensor::from_vec(vec![3.0, 4.0]));
        let cc = tape.mul(c, c).unwrap(); // constant-only subgraph
        let y = tape.mul(x, cc).unwrap();
        let l = tape.sum(y).unwrap();
        let grads = tape.backward(l).unwrap();
        assert!(grads.get(c).is_none());
        assert!(grads.get(cc).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[9.0, 16.0]);
    }
}
