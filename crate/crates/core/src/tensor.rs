//! Tape-based reverse-mode automatic differentiation over `f64` arrays.
//!
//! A [`Tape`] is an append-only arena of nodes recorded in execution
//! order. [`DiffTensor`] is a handle to either a tracked node or an
//! untracked constant. Operations between untracked tensors never touch
//! a tape, so the same code doubles as a plain evaluation path.
//!
//! Broadcasting is deliberately restricted: a binary operation accepts
//! two equal shapes or one single-element operand. Anything richer is
//! expressed with explicit `matmul`, `gather_rows`, or `reshape`.
//!
//! Each tape supports exactly one backward pass. A second call reports
//! [`Error::StaleTape`] rather than silently returning stale gradients.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use ndarray::{ArrayD, Axis, Ix2, IxDyn};

use crate::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
struct NodeId(usize);

#[derive(Clone, Copy, Debug)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinKind {
    fn name(self) -> &'static str {
        match self {
            BinKind::Add => "add",
            BinKind::Sub => "sub",
            BinKind::Mul => "mul",
            BinKind::Div => "div",
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum UnKind {
    Neg,
    Exp,
    Ln,
    Sqrt,
    Square,
    Relu,
    Sigmoid,
    Sin,
    Cos,
    Softplus,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Bin { kind: BinKind, a: NodeId, b: NodeId },
    Un { kind: UnKind, x: NodeId },
    Clamp { x: NodeId, lo: f64, hi: f64 },
    Sum { x: NodeId, axes: Vec<usize> },
    Mean { x: NodeId, axes: Vec<usize> },
    Matmul { a: NodeId, b: NodeId },
    Gather { x: NodeId, indices: Vec<usize> },
    Reshape { x: NodeId },
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
}

/// Recording arena. Create with [`Tape::new`], make parameters with
/// [`Tape::leaf`], then run ordinary tensor code.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

impl Tape {
    pub fn new() -> Rc<Tape> {
        Rc::new(Tape {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        })
    }

    /// Records `value` as a tracked input node.
    pub fn leaf(self: &Rc<Self>, value: ArrayD<f64>) -> DiffTensor {
        let id = self.push(value.clone(), Op::Leaf);
        DiffTensor {
            value,
            node: Some(id),
            tape: Some(Rc::clone(self)),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: ArrayD<f64>, op: Op) -> NodeId {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        NodeId(nodes.len() - 1)
    }

    /// Node id for `t` on this tape, recording untracked constants as
    /// fresh leaves so backward sees a uniform graph.
    fn intern(&self, t: &DiffTensor) -> NodeId {
        match t.node {
            Some(id) => id,
            None => self.push(t.value.clone(), Op::Leaf),
        }
    }
}

/// Handle to an array value, optionally tracked on a [`Tape`].
#[derive(Clone)]
pub struct DiffTensor {
    value: ArrayD<f64>,
    node: Option<NodeId>,
    tape: Option<Rc<Tape>>,
}

impl DiffTensor {
    /// Untracked value. Operations on constants are evaluated eagerly
    /// and never recorded.
    pub fn constant(value: ArrayD<f64>) -> DiffTensor {
        DiffTensor {
            value,
            node: None,
            tape: None,
        }
    }

    /// Untracked zero-rank scalar.
    pub fn scalar(v: f64) -> DiffTensor {
        DiffTensor::constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    pub fn value(&self) -> &ArrayD<f64> {
        &self.value
    }

    pub fn into_value(self) -> ArrayD<f64> {
        self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.value.len() != 1 {
            return Err(Error::NonScalarRoot {
                shape: self.shape().to_vec(),
            });
        }
        Ok(*self.value.first().expect("length checked"))
    }

    pub fn add(&self, other: &DiffTensor) -> Result<DiffTensor> {
        self.binary(other, BinKind::Add)
    }

    pub fn sub(&self, other: &DiffTensor) -> Result<DiffTensor> {
        self.binary(other, BinKind::Sub)
    }

    pub fn mul(&self, other: &DiffTensor) -> Result<DiffTensor> {
        self.binary(other, BinKind::Mul)
    }

    pub fn div(&self, other: &DiffTensor) -> Result<DiffTensor> {
        self.binary(other, BinKind::Div)
    }

    pub fn add_scalar(&self, s: f64) -> DiffTensor {
        self.binary(&DiffTensor::scalar(s), BinKind::Add)
            .expect("scalar broadcast cannot mismatch")
    }

    pub fn mul_scalar(&self, s: f64) -> DiffTensor {
        self.binary(&DiffTensor::scalar(s), BinKind::Mul)
            .expect("scalar broadcast cannot mismatch")
    }

    pub fn div_scalar(&self, s: f64) -> DiffTensor {
        self.binary(&DiffTensor::scalar(s), BinKind::Div)
            .expect("scalar broadcast cannot mismatch")
    }

    pub fn neg(&self) -> DiffTensor {
        self.unary_total(UnKind::Neg)
    }

    pub fn exp(&self) -> DiffTensor {
        self.unary_total(UnKind::Exp)
    }

    /// Natural log. Requires strictly positive input.
    pub fn ln(&self) -> Result<DiffTensor> {
        self.unary(UnKind::Ln)
    }

    /// Requires non-negative input; the derivative at zero is infinite.
    pub fn sqrt(&self) -> Result<DiffTensor> {
        self.unary(UnKind::Sqrt)
    }

    pub fn square(&self) -> DiffTensor {
        self.unary_total(UnKind::Square)
    }

    /// Subgradient zero at the kink.
    pub fn relu(&self) -> DiffTensor {
        self.unary_total(UnKind::Relu)
    }

    pub fn sigmoid(&self) -> DiffTensor {
        self.unary_total(UnKind::Sigmoid)
    }

    pub fn sin(&self) -> DiffTensor {
        self.unary_total(UnKind::Sin)
    }

    pub fn cos(&self) -> DiffTensor {
        self.unary_total(UnKind::Cos)
    }

    pub fn softplus(&self) -> DiffTensor {
        self.unary_total(UnKind::Softplus)
    }

    /// `relu(x) + relu(-x)`; the subgradient at zero is zero.
    pub fn abs(&self) -> DiffTensor {
        self.relu()
            .add(&self.neg().relu())
            .expect("shapes are identical")
    }

    /// Gradient passes through where `lo <= x <= hi` and is zero where
    /// the value was clamped.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<DiffTensor> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!(
                "clamp bounds must be finite with lo <= hi, got [{lo}, {hi}]"
            )));
        }
        let value = self.value.mapv(|v| v.clamp(lo, hi));
        Ok(match (&self.tape, self.node) {
            (Some(t), Some(x)) => {
                let id = t.push(value.clone(), Op::Clamp { x, lo, hi });
                DiffTensor {
                    value,
                    node: Some(id),
                    tape: Some(Rc::clone(t)),
                }
            }
            _ => DiffTensor::constant(value),
        })
    }

    /// Sum of all elements, as a zero-rank tensor.
    pub fn sum_all(&self) -> DiffTensor {
        let axes: Vec<usize> = (0..self.value.ndim()).collect();
        self.reduce(axes, false).expect("full axis list is valid")
    }

    /// Mean of all elements, as a zero-rank tensor.
    pub fn mean_all(&self) -> DiffTensor {
        let axes: Vec<usize> = (0..self.value.ndim()).collect();
        self.reduce(axes, true).expect("full axis list is valid")
    }

    /// Sum over `axes`; the reduced axes are removed from the shape.
    pub fn sum_axes(&self, axes: &[usize]) -> Result<DiffTensor> {
        self.reduce(self.checked_axes(axes)?, false)
    }

    /// Mean over `axes`; the reduced axes are removed from the shape.
    pub fn mean_axes(&self, axes: &[usize]) -> Result<DiffTensor> {
        self.reduce(self.checked_axes(axes)?, true)
    }

    /// 2-D matrix product.
    pub fn matmul(&self, other: &DiffTensor) -> Result<DiffTensor> {
        let (ls, rs) = (self.shape(), other.shape());
        if ls.len() != 2 || rs.len() != 2 || ls[1] != rs[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: ls.to_vec(),
                rhs: rs.to_vec(),
            });
        }
        let a2 = self
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("rank checked");
        let b2 = other
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("rank checked");
        let value = a2.dot(&b2).into_dyn();
        let tape = join(self, other)?;
        Ok(match tape {
            Some(t) => {
                let a = t.intern(self);
                let b = t.intern(other);
                let id = t.push(value.clone(), Op::Matmul { a, b });
                DiffTensor {
                    value,
                    node: Some(id),
                    tape: Some(t),
                }
            }
            None => DiffTensor::constant(value),
        })
    }

    /// Selects rows along axis 0. Duplicate indices are allowed; the
    /// backward pass scatter-adds into the source rows.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<DiffTensor> {
        let shape = self.shape();
        if shape.is_empty() {
            return Err(Error::InvalidAxis { axis: 0, rank: 0 });
        }
        for &ix in indices {
            if ix >= shape[0] {
                return Err(Error::IndexOutOfBounds {
                    index: ix,
                    len: shape[0],
                });
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape[0] = indices.len();
        let mut value = ArrayD::zeros(IxDyn(&out_shape));
        for (row, &src) in indices.iter().enumerate() {
            value
                .index_axis_mut(Axis(0), row)
                .assign(&self.value.index_axis(Axis(0), src));
        }
        Ok(match (&self.tape, self.node) {
            (Some(t), Some(x)) => {
                let id = t.push(
                    value.clone(),
                    Op::Gather {
                        x,
                        indices: indices.to_vec(),
                    },
                );
                DiffTensor {
                    value,
                    node: Some(id),
                    tape: Some(Rc::clone(t)),
                }
            }
            _ => DiffTensor::constant(value),
        })
    }

    /// Row-major reshape preserving element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<DiffTensor> {
        let to_len: usize = shape.iter().product();
        if to_len != self.value.len() {
            return Err(Error::BadReshape {
                from: self.shape().to_vec(),
                from_len: self.value.len(),
                to: shape.to_vec(),
                to_len,
            });
        }
        let value = reshape_std(&self.value, shape);
        Ok(match (&self.tape, self.node) {
            (Some(t), Some(x)) => {
                let id = t.push(value.clone(), Op::Reshape { x });
                DiffTensor {
                    value,
                    node: Some(id),
                    tape: Some(Rc::clone(t)),
                }
            }
            _ => DiffTensor::constant(value),
        })
    }

    /// Reverse-mode sweep from a one-element root. Consumes the tape's
    /// single backward budget.
    pub fn backward(&self) -> Result<GradientMap> {
        let tape = self.tape.as_ref().ok_or(Error::NotTracked)?;
        let root = self.node.ok_or(Error::NotTracked)?;
        if self.value.len() != 1 {
            return Err(Error::NonScalarRoot {
                shape: self.shape().to_vec(),
            });
        }
        if tape.consumed.replace(true) {
            return Err(Error::StaleTape);
        }

        let nodes = tape.nodes.borrow();
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; nodes.len()];
        grads[root.0] = Some(ArrayD::ones(self.value.raw_dim()));

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &nodes[id].op {
                Op::Leaf => {}
                Op::Bin { kind, a, b } => {
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    let (ca, cb) = match kind {
                        BinKind::Add => (g.clone(), g.clone()),
                        BinKind::Sub => (g.clone(), -&g),
                        BinKind::Mul => (ew(&g, bv, BinKind::Mul), ew(&g, av, BinKind::Mul)),
                        BinKind::Div => {
                            let da = ew(&g, bv, BinKind::Div);
                            let num = ew(&g, av, BinKind::Mul);
                            let b2 = ew(bv, bv, BinKind::Mul);
                            (da, -ew(&num, &b2, BinKind::Div))
                        }
                    };
                    acc(&mut grads, *a, reduce_to(av.shape(), ca));
                    acc(&mut grads, *b, reduce_to(bv.shape(), cb));
                }
                Op::Un { kind, x } => {
                    let xv = &nodes[x.0].value;
                    let yv = &nodes[id].value;
                    let c = match kind {
                        UnKind::Neg => -&g,
                        UnKind::Exp => &g * yv,
                        UnKind::Ln => &g / xv,
                        UnKind::Sqrt => &g * &yv.mapv(|y| 0.5 / y),
                        UnKind::Square => &(&g * xv) * 2.0,
                        UnKind::Relu => &g * &xv.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }),
                        UnKind::Sigmoid => &g * &yv.mapv(|y| y * (1.0 - y)),
                        UnKind::Sin => &g * &xv.mapv(f64::cos),
                        UnKind::Cos => -&(&g * &xv.mapv(f64::sin)),
                        UnKind::Softplus => &g * &xv.mapv(sigmoid_scalar),
                    };
                    acc(&mut grads, *x, c);
                }
                Op::Clamp { x, lo, hi } => {
                    let xv = &nodes[x.0].value;
                    let mask = xv.mapv(|v| if v >= *lo && v <= *hi { 1.0 } else { 0.0 });
                    acc(&mut grads, *x, &g * &mask);
                }
                Op::Sum { x, axes } => {
                    let c = expand(&g, nodes[x.0].value.shape(), axes, 1.0);
                    acc(&mut grads, *x, c);
                }
                Op::Mean { x, axes } => {
                    let shape = nodes[x.0].value.shape();
                    let count: usize = axes.iter().map(|&ax| shape[ax]).product();
                    let c = expand(&g, shape, axes, 1.0 / count as f64);
                    acc(&mut grads, *x, c);
                }
                Op::Matmul { a, b } => {
                    let g2 = g
                        .view()
                        .into_dimensionality::<Ix2>()
                        .expect("matmul output is 2-d");
                    let a2 = nodes[a.0]
                        .value
                        .view()
                        .into_dimensionality::<Ix2>()
                        .expect("matmul input is 2-d");
                    let b2 = nodes[b.0]
                        .value
                        .view()
                        .into_dimensionality::<Ix2>()
                        .expect("matmul input is 2-d");
                    acc(&mut grads, *a, g2.dot(&b2.t()).into_dyn());
                    acc(&mut grads, *b, a2.t().dot(&g2).into_dyn());
                }
                Op::Gather { x, indices } => {
                    let mut c = ArrayD::zeros(nodes[x.0].value.raw_dim());
                    for (row, &src) in indices.iter().enumerate() {
                        let gs = g.index_axis(Axis(0), row);
                        let mut dst = c.index_axis_mut(Axis(0), src);
                        dst += &gs;
                    }
                    acc(&mut grads, *x, c);
                }
                Op::Reshape { x } => {
                    let c = reshape_std(&g, nodes[x.0].value.shape());
                    acc(&mut grads, *x, c);
                }
            }
            grads[id] = Some(g);
        }

        Ok(GradientMap { grads })
    }

    fn binary(&self, other: &DiffTensor, kind: BinKind) -> Result<DiffTensor> {
        let value = elementwise(&self.value, &other.value, kind)?;
        let tape = join(self, other)?;
        Ok(match tape {
            Some(t) => {
                let a = t.intern(self);
                let b = t.intern(other);
                let id = t.push(value.clone(), Op::Bin { kind, a, b });
                DiffTensor {
                    value,
                    node: Some(id),
                    tape: Some(t),
                }
            }
            None => DiffTensor::constant(value),
        })
    }

    fn unary(&self, kind: UnKind) -> Result<DiffTensor> {
        let value = un_forward(&self.value, kind)?;
        Ok(match (&self.tape, self.node) {
            (Some(t), Some(x)) => {
                let id = t.push(value.clone(), Op::Un { kind, x });
                DiffTensor {
                    value,
                    node: Some(id),
                    tape: Some(Rc::clone(t)),
                }
            }
            _ => DiffTensor::constant(value),
        })
    }

    fn unary_total(&self, kind: UnKind) -> DiffTensor {
        self.unary(kind).expect("total op has no domain errors")
    }

    fn checked_axes(&self, axes: &[usize]) -> Result<Vec<usize>> {
        let rank = self.value.ndim();
        if axes.is_empty() {
            return Err(Error::Domain {
                op: "reduce",
                detail: "empty axis list; use sum_all or mean_all".into(),
            });
        }
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Domain {
                    op: "reduce",
                    detail: format!("duplicate axis {}", w[0]),
                });
            }
        }
        for &ax in &sorted {
            if ax >= rank {
                return Err(Error::InvalidAxis { axis: ax, rank });
            }
        }
        Ok(sorted)
    }

    /// `axes` must be sorted, in-range, and free of duplicates.
    fn reduce(&self, axes: Vec<usize>, mean: bool) -> Result<DiffTensor> {
        let mut value = self.value.clone();
        for &ax in axes.iter().rev() {
            value = value.sum_axis(Axis(ax));
        }
        if mean {
            let count: usize = axes.iter().map(|&ax| self.shape()[ax]).product();
            value.mapv_inplace(|v| v / count as f64);
        }
        let op = |x| {
            if mean {
                Op::Mean { x, axes }
            } else {
                Op::Sum { x, axes }
            }
        };
        Ok(match (&self.tape, self.node) {
            (Some(t), Some(x)) => {
                let id = t.push(value.clone(), op(x));
                DiffTensor {
                    value,
                    node: Some(id),
                    tape: Some(Rc::clone(t)),
                }
            }
            _ => DiffTensor::constant(value),
        })
    }
}

/// Gradients produced by one backward pass, queryable by tensor handle.
pub struct GradientMap {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl GradientMap {
    /// Gradient of the root with respect to `t`. Tensors that did not
    /// influence the root get a zero gradient of matching shape.
    pub fn grad(&self, t: &DiffTensor) -> Result<ArrayD<f64>> {
        let id = t.node.ok_or(Error::NotTracked)?;
        Ok(match self.grads.get(id.0).and_then(|o| o.as_ref()) {
            Some(g) => g.clone(),
            None => ArrayD::zeros(t.value.raw_dim()),
        })
    }
}

fn join(a: &DiffTensor, b: &DiffTensor) -> Result<Option<Rc<Tape>>> {
    match (&a.tape, &b.tape) {
        (Some(x), Some(y)) => {
            if Rc::ptr_eq(x, y) {
                Ok(Some(Rc::clone(x)))
            } else {
                Err(Error::Domain {
                    op: "binary",
                    detail: "operands are recorded on different tapes".into(),
                })
            }
        }
        (Some(x), None) | (None, Some(x)) => Ok(Some(Rc::clone(x))),
        (None, None) => Ok(None),
    }
}

fn elementwise(a: &ArrayD<f64>, b: &ArrayD<f64>, kind: BinKind) -> Result<ArrayD<f64>> {
    if a.shape() == b.shape() {
        return Ok(match kind {
            BinKind::Add => a + b,
            BinKind::Sub => a - b,
            BinKind::Mul => a * b,
            BinKind::Div => a / b,
        });
    }
    if b.len() == 1 {
        let s = *b.first().expect("length checked");
        return Ok(match kind {
            BinKind::Add => a.mapv(|x| x + s),
            BinKind::Sub => a.mapv(|x| x - s),
            BinKind::Mul => a.mapv(|x| x * s),
            BinKind::Div => a.mapv(|x| x / s),
        });
    }
    if a.len() == 1 {
        let s = *a.first().expect("length checked");
        return Ok(match kind {
            BinKind::Add => b.mapv(|x| s + x),
            BinKind::Sub => b.mapv(|x| s - x),
            BinKind::Mul => b.mapv(|x| s * x),
            BinKind::Div => b.mapv(|x| s / x),
        });
    }
    Err(Error::ShapeMismatch {
        op: kind.name(),
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })
}

/// Elementwise op whose operand shapes were validated during forward.
fn ew(a: &ArrayD<f64>, b: &ArrayD<f64>, kind: BinKind) -> ArrayD<f64> {
    elementwise(a, b, kind).expect("shapes validated during forward")
}

fn un_forward(a: &ArrayD<f64>, kind: UnKind) -> Result<ArrayD<f64>> {
    match kind {
        UnKind::Ln => {
            if a.iter().any(|&x| x <= 0.0) {
                return Err(Error::Domain {
                    op: "ln",
                    detail: "requires strictly positive input".into(),
                });
            }
        }
        UnKind::Sqrt => {
            if a.iter().any(|&x| x < 0.0) {
                return Err(Error::Domain {
                    op: "sqrt",
                    detail: "requires non-negative input".into(),
                });
            }
        }
        _ => {}
    }
    Ok(match kind {
        UnKind::Neg => -a,
        UnKind::Exp => a.mapv(f64::exp),
        UnKind::Ln => a.mapv(f64::ln),
        UnKind::Sqrt => a.mapv(f64::sqrt),
        UnKind::Square => a.mapv(|x| x * x),
        UnKind::Relu => a.mapv(|x| x.max(0.0)),
        UnKind::Sigmoid => a.mapv(sigmoid_scalar),
        UnKind::Sin => a.mapv(f64::sin),
        UnKind::Cos => a.mapv(f64::cos),
        // max(x, 0) + ln(1 + e^-|x|) avoids overflow for large |x|.
        UnKind::Softplus => a.mapv(|x| x.max(0.0) + (-x.abs()).exp().ln_1p()),
    })
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sums `arr` down to `target` when the forward op broadcast a
/// single-element operand; otherwise passes it through.
fn reduce_to(target: &[usize], arr: ArrayD<f64>) -> ArrayD<f64> {
    if arr.shape() == target {
        arr
    } else {
        ArrayD::from_elem(IxDyn(target), arr.sum())
    }
}

/// Broadcasts a reduced gradient back over the removed `axes`.
fn expand(g: &ArrayD<f64>, parent_shape: &[usize], axes: &[usize], scale: f64) -> ArrayD<f64> {
    let mut v = g.mapv(|x| x * scale);
    for &ax in axes {
        v = v.insert_axis(Axis(ax));
    }
    v.broadcast(IxDyn(parent_shape))
        .expect("inserted axes broadcast to parent shape")
        .to_owned()
}

/// Row-major reshape that tolerates any input layout.
fn reshape_std(a: &ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    let flat: Vec<f64> = a.iter().copied().collect();
    ArrayD::from_shape_vec(IxDyn(shape), flat).expect("element count checked by caller")
}

fn acc(grads: &mut [Option<ArrayD<f64>>], id: NodeId, c: ArrayD<f64>) {
    match &mut grads[id.0] {
        Some(g) => *g += &c,
        slot => *slot = Some(c),
    }
}
