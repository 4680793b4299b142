use nalgebra::DMatrix;

use super::kernels::{kernel_backward, kernel_forward, SumKernel};
use crate::error::{Error, Result};
use crate::linalg::{eigh, spectral_derivative, symmetrize, EigDecomposition, MatrixFunction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Scalar(f64),
    Matrix(DMatrix<f64>),
}

impl Value {
    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            Value::Scalar(v) => Some(*v),
            Value::Matrix(_) => None,
        }
    }

    pub fn as_matrix(&self) -> Option<&DMatrix<f64>> {
        match self {
            Value::Matrix(m) => Some(m),
            Value::Scalar(_) => None,
        }
    }

    fn zeros_like(&self) -> Value {
        match self {
            Value::Scalar(_) => Value::Scalar(0.0),
            Value::Matrix(m) => Value::Matrix(DMatrix::zeros(m.nrows(), m.ncols())),
        }
    }

    fn accumulate(&mut self, other: Value) {
        match (self, other) {
            (Value::Scalar(a), Value::Scalar(b)) => *a += b,
            (Value::Matrix(a), Value::Matrix(b)) => *a += b,
            _ => unreachable!("adjoint kinds are fixed at construction"),
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf { symmetric: bool },
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScaledIdentity(NodeId, f64),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    /// `AᵀXA`.
    Congruence { x: NodeId, a: NodeId },
    Trace(NodeId),
    Sum(Vec<NodeId>),
    /// Matrix node times scalar node.
    ScaleBy { m: NodeId, s: NodeId },
    ScalarAdd(NodeId, NodeId),
    ScalarMul(NodeId, NodeId),
    ScalarPow(NodeId, f64),
    ScalarAddConst(NodeId, f64),
    EigenFn { x: NodeId, f: MatrixFunction },
    /// `L_X(S)`.
    Lyapunov { x: NodeId, s: NodeId },
    SpectralKernel { x: NodeId, s: NodeId, kernel: SumKernel },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Value,
    eig: Option<EigDecomposition>,
}

/// Append-only reverse-mode tape over a fixed set of matrix operations.
///
/// Every builder method validates shapes and domains and evaluates the forward value
/// immediately, so a tape that builds without error can always be differentiated.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of every node reached by a backward pass.
#[derive(Clone, Debug)]
pub struct Gradient {
    adjoints: Vec<Option<Value>>,
    shapes: Vec<Value>,
}

impl Gradient {
    pub fn get(&self, id: NodeId) -> Option<&Value> {
        self.adjoints.get(id.0).and_then(Option::as_ref)
    }

    /// Matrix adjoint, zero if the node did not influence the seeds.
    pub fn matrix(&self, id: NodeId) -> DMatrix<f64> {
        match self.get(id) {
            Some(Value::Matrix(m)) => m.clone(),
            _ => match &self.shapes[id.0] {
                Value::Matrix(m) => DMatrix::zeros(m.nrows(), m.ncols()),
                Value::Scalar(_) => panic!("node {} is scalar", id.0),
            },
        }
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        match self.get(id) {
            Some(Value::Scalar(v)) => *v,
            Some(Value::Matrix(_)) => panic!("node {} is a matrix", id.0),
            None => 0.0,
        }
    }
}

fn shape_error(context: &str, detail: String) -> Error {
    Error::Precondition(format!("tape {context}: {detail}"))
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Value {
        &self.nodes[id.0].value
    }

    pub fn matrix(&self, id: NodeId) -> &DMatrix<f64> {
        self.nodes[id.0]
            .value
            .as_matrix()
            .unwrap_or_else(|| panic!("node {} is scalar", id.0))
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0]
            .value
            .as_scalar()
            .unwrap_or_else(|| panic!("node {} is a matrix", id.0))
    }

    fn push(&mut self, op: Op) -> Result<NodeId> {
        let (value, eig) = self.eval(&op)?;
        self.nodes.push(Node { op, value, eig });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn check_id(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(shape_error("input", format!("unknown node {}", id.0)));
        }
        Ok(())
    }

    fn mat(&self, id: NodeId, context: &str) -> Result<&DMatrix<f64>> {
        self.check_id(id)?;
        self.nodes[id.0]
            .value
            .as_matrix()
            .ok_or_else(|| shape_error(context, format!("node {} is scalar", id.0)))
    }

    fn square(&self, id: NodeId, context: &str) -> Result<&DMatrix<f64>> {
        let m = self.mat(id, context)?;
        if !m.is_square() {
            return Err(shape_error(context, format!("node {} is not square", id.0)));
        }
        Ok(m)
    }

    fn sca(&self, id: NodeId, context: &str) -> Result<f64> {
        self.check_id(id)?;
        self.nodes[id.0]
            .value
            .as_scalar()
            .ok_or_else(|| shape_error(context, format!("node {} is a matrix", id.0)))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, context: &str) -> Result<()> {
        let (ma, mb) = (self.mat(a, context)?, self.mat(b, context)?);
        if ma.shape() != mb.shape() {
            return Err(shape_error(
                context,
                format!("shapes {:?} and {:?} differ", ma.shape(), mb.shape()),
            ));
        }
        Ok(())
    }

    fn positive_eig(&self, x: NodeId, context: &str) -> Result<EigDecomposition> {
        let e = eigh(self.square(x, context)?)?;
        if !(e.min_value() > 0.0) {
            return Err(Error::out_of_domain(format!("tape {context}"), e.min_value()));
        }
        Ok(e)
    }

    fn eval(&self, op: &Op) -> Result<(Value, Option<EigDecomposition>)> {
        let m = |v: DMatrix<f64>| Ok((Value::Matrix(v), None));
        let s = |v: f64| Ok((Value::Scalar(v), None));
        match op {
            Op::Leaf { .. } | Op::Constant => unreachable!("leaves are pushed directly"),
            Op::Add(a, b) => {
                self.same_shape(*a, *b, "add")?;
                m(self.mat(*a, "add")? + self.mat(*b, "add")?)
            }
            Op::Sub(a, b) => {
                self.same_shape(*a, *b, "sub")?;
                m(self.mat(*a, "sub")? - self.mat(*b, "sub")?)
            }
            Op::Scale(a, c) => m(self.mat(*a, "scale")? * *c),
            Op::AddScaledIdentity(a, c) => {
                let x = self.square(*a, "add_scaled_identity")?;
                m(x + DMatrix::identity(x.nrows(), x.nrows()) * *c)
            }
            Op::MatMul(a, b) => {
                let (x, y) = (self.mat(*a, "matmul")?, self.mat(*b, "matmul")?);
                if x.ncols() != y.nrows() {
                    return Err(shape_error(
                        "matmul",
                        format!("inner dimensions {} and {}", x.ncols(), y.nrows()),
                    ));
                }
                m(x * y)
            }
            Op::Transpose(a) => m(self.mat(*a, "transpose")?.transpose()),
            Op::Congruence { x, a } => {
                let (xm, am) = (self.square(*x, "congruence")?, self.mat(*a, "congruence")?);
                if am.nrows() != xm.nrows() {
                    return Err(shape_error(
                        "congruence",
                        format!("{}x{} factor for {}x{} matrix", am.nrows(), am.ncols(), xm.nrows(), xm.ncols()),
                    ));
                }
                m(am.transpose() * xm * am)
            }
            Op::Trace(a) => s(self.square(*a, "trace")?.trace()),
            Op::Sum(ids) => {
                let first = *ids
                    .first()
                    .ok_or_else(|| shape_error("sum", "no terms".into()))?;
                self.check_id(first)?;
                match &self.nodes[first.0].value {
                    Value::Scalar(_) => {
                        let mut acc = 0.0;
                        for id in ids {
                            acc += self.sca(*id, "sum")?;
                        }
                        s(acc)
                    }
                    Value::Matrix(_) => {
                        let mut acc = self.mat(first, "sum")?.clone();
                        for id in &ids[1..] {
                            self.same_shape(first, *id, "sum")?;
                            acc += self.mat(*id, "sum")?;
                        }
                        m(acc)
                    }
                }
            }
            Op::ScaleBy { m: mat, s: sc } => {
                let c = self.sca(*sc, "scale_by")?;
                m(self.mat(*mat, "scale_by")? * c)
            }
            Op::ScalarAdd(a, b) => s(self.sca(*a, "scalar_add")? + self.sca(*b, "scalar_add")?),
            Op::ScalarMul(a, b) => s(self.sca(*a, "scalar_mul")? * self.sca(*b, "scalar_mul")?),
            Op::ScalarPow(a, p) => {
                let v = self.sca(*a, "scalar_pow")?;
                if v <= 0.0 && p.fract() != 0.0 {
                    return Err(Error::out_of_domain("tape scalar_pow", v));
                }
                s(v.powf(*p))
            }
            Op::ScalarAddConst(a, c) => s(self.sca(*a, "scalar_add_const")? + c),
            Op::EigenFn { x, f } => {
                if let MatrixFunction::ReluFloor(eps) = f {
                    if !(*eps > 0.0) {
                        return Err(shape_error("eigen_fn", format!("relu floor {eps}")));
                    }
                }
                let e = if f.requires_positive() {
                    self.positive_eig(*x, "eigen_fn")?
                } else {
                    eigh(self.square(*x, "eigen_fn")?)?
                };
                Ok((Value::Matrix(e.map(*f)), Some(e)))
            }
            Op::Lyapunov { x, s: rhs } => {
                self.same_shape(*x, *rhs, "lyapunov")?;
                let e = self.positive_eig(*x, "lyapunov")?;
                let v = kernel_forward(&e, self.mat(*rhs, "lyapunov")?, SumKernel::LyapunovInverse);
                Ok((Value::Matrix(v), Some(e)))
            }
            Op::SpectralKernel { x, s: rhs, kernel } => {
                self.same_shape(*x, *rhs, "spectral_kernel")?;
                let e = self.positive_eig(*x, "spectral_kernel")?;
                let v = kernel_forward(&e, self.mat(*rhs, "spectral_kernel")?, *kernel);
                Ok((Value::Matrix(v), Some(e)))
            }
        }
    }

    fn push_leaf(&mut self, value: Value, op: Op) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            eig: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Differentiable matrix input.
    pub fn leaf(&mut self, m: DMatrix<f64>) -> NodeId {
        self.push_leaf(Value::Matrix(m), Op::Leaf { symmetric: false })
    }

    /// Differentiable symmetric input; its adjoint is symmetrized.
    pub fn leaf_symmetric(&mut self, m: DMatrix<f64>) -> NodeId {
        self.push_leaf(Value::Matrix(symmetrize(&m)), Op::Leaf { symmetric: true })
    }

    pub fn leaf_scalar(&mut self, v: f64) -> NodeId {
        self.push_leaf(Value::Scalar(v), Op::Leaf { symmetric: false })
    }

    pub fn constant(&mut self, m: DMatrix<f64>) -> NodeId {
        self.push_leaf(Value::Matrix(m), Op::Constant)
    }

    pub fn constant_scalar(&mut self, v: f64) -> NodeId {
        self.push_leaf(Value::Scalar(v), Op::Constant)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.push(Op::Scale(a, c))
    }

    /// `A + cI`.
    pub fn add_scaled_identity(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.push(Op::AddScaledIdentity(a, c))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Transpose(a))
    }

    /// `AᵀXA`.
    pub fn congruence(&mut self, x: NodeId, a: NodeId) -> Result<NodeId> {
        self.push(Op::Congruence { x, a })
    }

    pub fn trace(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Trace(a))
    }

    /// Sum of scalar nodes or of same-shape matrix nodes.
    pub fn sum(&mut self, ids: &[NodeId]) -> Result<NodeId> {
        self.push(Op::Sum(ids.to_vec()))
    }

    /// Matrix node scaled by a scalar node.
    pub fn scale_by(&mut self, m: NodeId, s: NodeId) -> Result<NodeId> {
        self.push(Op::ScaleBy { m, s })
    }

    pub fn scalar_add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::ScalarAdd(a, b))
    }

    pub fn scalar_mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::ScalarMul(a, b))
    }

    pub fn scalar_pow(&mut self, a: NodeId, p: f64) -> Result<NodeId> {
        self.push(Op::ScalarPow(a, p))
    }

    pub fn scalar_add_const(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.push(Op::ScalarAddConst(a, c))
    }

    /// `U f(Λ) Uᵀ` of the symmetric part of `x`.
    pub fn eigen_fn(&mut self, x: NodeId, f: MatrixFunction) -> Result<NodeId> {
        self.push(Op::EigenFn { x, f })
    }

    /// `L_X(S)`, the solution of `XL + LX = S`.
    pub fn lyapunov(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        self.push(Op::Lyapunov { x, s })
    }

    pub fn spectral_kernel(&mut self, x: NodeId, s: NodeId, kernel: SumKernel) -> Result<NodeId> {
        self.push(Op::SpectralKernel { x, s, kernel })
    }

    /// Recompute every node from the leaf values into a fresh tape.
    pub fn replay(&self) -> Result<Tape> {
        let mut out = Tape {
            nodes: Vec::with_capacity(self.nodes.len()),
        };
        for node in &self.nodes {
            match node.op {
                Op::Leaf { .. } | Op::Constant => out.nodes.push(node.clone()),
                ref op => {
                    out.push(op.clone())?;
                }
            }
        }
        Ok(out)
    }

    /// Gradient of a scalar node with respect to every node.
    pub fn grad(&self, loss: NodeId) -> Result<Gradient> {
        self.check_id(loss)?;
        if self.nodes[loss.0].value.as_scalar().is_none() {
            return Err(shape_error("grad", format!("loss node {} is not scalar", loss.0)));
        }
        self.backward(&[(loss, Value::Scalar(1.0))])
    }

    /// Reverse accumulation from arbitrary seed adjoints.
    pub fn backward(&self, seeds: &[(NodeId, Value)]) -> Result<Gradient> {
        let n = self.nodes.len();
        let mut adj: Vec<Option<Value>> = vec![None; n];
        let mut top = 0;
        for (id, v) in seeds {
            self.check_id(*id)?;
            let want = &self.nodes[id.0].value;
            let ok = match (want, v) {
                (Value::Scalar(_), Value::Scalar(_)) => true,
                (Value::Matrix(a), Value::Matrix(b)) => a.shape() == b.shape(),
                _ => false,
            };
            if !ok {
                return Err(shape_error("backward", format!("seed shape mismatch at node {}", id.0)));
            }
            adj[id.0]
                .get_or_insert_with(|| want.zeros_like())
                .accumulate(v.clone());
            top = top.max(id.0 + 1);
        }

        for i in (0..top).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let mut out: Vec<(NodeId, Value)> = Vec::with_capacity(2);
            let mut send = |id: NodeId, v: Value| out.push((id, v));
            let gm = || g.as_matrix().expect("matrix adjoint");
            let gs = || g.as_scalar().expect("scalar adjoint");
            match &node.op {
                Op::Leaf { symmetric } => {
                    let g = match (&g, symmetric) {
                        (Value::Matrix(m), true) => Value::Matrix(symmetrize(m)),
                        _ => g.clone(),
                    };
                    adj[i] = Some(g);
                    continue;
                }
                Op::Constant => {}
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    send(*a, g.clone());
                    send(*b, Value::Matrix(-gm()));
                }
                Op::Scale(a, c) => send(*a, Value::Matrix(gm() * *c)),
                Op::AddScaledIdentity(a, _) => send(*a, g.clone()),
                Op::MatMul(a, b) => {
                    let (x, y) = (self.matrix(*a), self.matrix(*b));
                    send(*a, Value::Matrix(gm() * y.transpose()));
                    send(*b, Value::Matrix(x.transpose() * gm()));
                }
                Op::Transpose(a) => send(*a, Value::Matrix(gm().transpose())),
                Op::Congruence { x, a } => {
                    let (xm, am) = (self.matrix(*x), self.matrix(*a));
                    let g = gm();
                    send(*x, Value::Matrix(am * g * am.transpose()));
                    send(*a, Value::Matrix(xm * am * g.transpose() + xm.transpose() * am * g));
                }
                Op::Trace(a) => {
                    let d = self.matrix(*a).nrows();
                    send(*a, Value::Matrix(DMatrix::identity(d, d) * gs()));
                }
                Op::Sum(ids) => {
                    for id in ids {
                        send(*id, g.clone());
                    }
                }
                Op::ScaleBy { m, s } => {
                    let c = self.scalar(*s);
                    send(*m, Value::Matrix(gm() * c));
                    send(*s, Value::Scalar(gm().dot(self.matrix(*m))));
                }
                Op::ScalarAdd(a, b) => {
                    send(*a, g.clone());
                    send(*b, g.clone());
                }
                Op::ScalarMul(a, b) => {
                    let (x, y) = (self.scalar(*a), self.scalar(*b));
                    send(*a, Value::Scalar(gs() * y));
                    send(*b, Value::Scalar(gs() * x));
                }
                Op::ScalarPow(a, p) => {
                    let x = self.scalar(*a);
                    send(*a, Value::Scalar(gs() * p * x.powf(p - 1.0)));
                }
                Op::ScalarAddConst(a, _) => send(*a, g.clone()),
                Op::EigenFn { x, f } => {
                    let e = node.eig.as_ref().expect("cached eigendecomposition");
                    send(*x, Value::Matrix(backward_eigen_function(e, *f, gm())));
                }
                Op::Lyapunov { x, s } => {
                    let e = node.eig.as_ref().expect("cached eigendecomposition");
                    let p = node.value.as_matrix().expect("matrix value");
                    let (ds, dx) = backward_lyapunov(e, p, gm());
                    send(*s, Value::Matrix(ds));
                    send(*x, Value::Matrix(dx));
                }
                Op::SpectralKernel { x, s, kernel } => {
                    let e = node.eig.as_ref().expect("cached eigendecomposition");
                    let (ds, dx) = kernel_backward(e, self.matrix(*s), *kernel, gm());
                    send(*s, Value::Matrix(ds));
                    send(*x, Value::Matrix(dx));
                }
            }
            for (id, v) in out {
                match &mut adj[id.0] {
                    Some(acc) => acc.accumulate(v),
                    slot => *slot = Some(v),
                }
            }
        }

        Ok(Gradient {
            adjoints: adj,
            shapes: self.nodes.iter().map(|n| n.value.zeros_like()).collect(),
        })
    }
}

/// Daleckii-Krein rule: `X̄ = U (F ⊙ Uᵀ sym(Ȳ) U) Uᵀ`, `F` the divided differences of `f`.
pub fn backward_eigen_function(
    eig: &EigDecomposition,
    f: MatrixFunction,
    upstream: &DMatrix<f64>,
) -> DMatrix<f64> {
    symmetrize(&spectral_derivative(eig, f, &symmetrize(upstream)))
}

/// Adjoints of `P = L_X(S)`: `S̄ = L_X(P̄)`, `X̄ = -P L_X(P̄) - L_X(P̄) P`.
pub fn backward_lyapunov(
    eig: &EigDecomposition,
    p: &DMatrix<f64>,
    upstream: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let q = kernel_forward(eig, upstream, SumKernel::LyapunovInverse);
    let dx = -(p * &q) - &q * p;
    (q, symmetrize(&dx))
}
