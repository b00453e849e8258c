//! Reverse-mode differentiation over matrix primitives.
//!
//! A [`Tape`] records every primitive application in order. Node ids are
//! assigned on append, so operands always precede their users and a single
//! backwards walk over the ids visits the graph in reverse topological order.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::linalg;
use crate::loss;
use crate::matrix::{self, Matrix};

/// Marks a gather slot that reads as zero (padding).
pub const GATHER_ZERO: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub enum Primitive {
    MatMul,
    Add,
    Sub,
    Scale(f64),
    Hadamard,
    Transpose,
    ConcatRows,
    SliceRows { start: usize, end: usize },
    ConcatCols,
    SliceCols { start: usize, end: usize },
    Activation(Activation),
    /// Inverse of a symmetric positive definite matrix.
    SpdInverse,
    /// Fused softmax and cross-entropy, averaged over (weighted) columns.
    SoftmaxXent {
        labels: Rc<Matrix>,
        col_weights: Option<Rc<Vec<f64>>>,
    },
    /// Mean over (weighted) columns of the squared column error.
    Mse {
        labels: Rc<Matrix>,
        col_weights: Option<Rc<Vec<f64>>>,
    },
    ReduceSum,
    /// `out.data[i] = in.data[index[i]]`, or zero where the index is
    /// [`GATHER_ZERO`]. Covers patch extraction, pooling and reshapes.
    Gather {
        rows: usize,
        cols: usize,
        index: Rc<Vec<u32>>,
    },
}

impl Primitive {
    fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Scale(_) => "scale",
            Primitive::Hadamard => "hadamard",
            Primitive::Transpose => "transpose",
            Primitive::ConcatRows => "concat_rows",
            Primitive::SliceRows { .. } => "slice_rows",
            Primitive::ConcatCols => "concat_cols",
            Primitive::SliceCols { .. } => "slice_cols",
            Primitive::Activation(_) => "activation",
            Primitive::SpdInverse => "spd_inverse",
            Primitive::SoftmaxXent { .. } => "softmax_xent",
            Primitive::Mse { .. } => "mse",
            Primitive::ReduceSum => "reduce_sum",
            Primitive::Gather { .. } => "gather",
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Apply(Primitive),
}

#[derive(Debug)]
struct Node {
    op: Op,
    operands: Vec<usize>,
    value: Rc<Matrix>,
    /// Cached by the forward pass when the reverse rule needs it.
    aux: Option<Rc<Matrix>>,
    requires_grad: bool,
}

/// Recorded computation graph. Confined to one thread.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// A value recorded on a tape.
#[derive(Debug, Clone)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
    value: Rc<Matrix>,
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> &Matrix {
        &self.value
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }
}

/// Adjoints produced by one reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of `v`; zeros if the loss does not depend on it.
    pub fn get(&self, v: &Var<'_>) -> Matrix {
        self.by_id(v.id)
    }

    pub fn by_id(&self, id: usize) -> Matrix {
        match self.adjoints.get(id).and_then(|a| a.as_ref()) {
            Some(m) => m.clone(),
            None => {
                let (r, c) = self.shapes[id];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn wrt(&self, vars: &[Var<'_>]) -> Vec<Matrix> {
        vars.iter().map(|v| self.get(v)).collect()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, operands: Vec<usize>, value: Matrix, aux: Option<Matrix>, requires_grad: bool) -> Var<'_> {
        let value = Rc::new(value);
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        debug_assert!(operands.iter().all(|&o| o < id));
        nodes.push(Node {
            op,
            operands,
            value: value.clone(),
            aux: aux.map(Rc::new),
            requires_grad,
        });
        Var {
            tape: self,
            id,
            value,
        }
    }

    /// A differentiable input.
    pub fn leaf(&self, m: Matrix) -> Var<'_> {
        self.push(Op::Leaf, Vec::new(), m, None, true)
    }

    /// A fixed input; no adjoint is propagated into it.
    pub fn constant(&self, m: Matrix) -> Var<'_> {
        self.push(Op::Leaf, Vec::new(), m, None, false)
    }

    /// Records `primitive` applied to `operands` and returns its value.
    pub fn apply<'a>(&'a self, primitive: Primitive, operands: &[&Var<'a>]) -> Result<Var<'a>> {
        for v in operands {
            if !core::ptr::eq(v.tape, self) {
                return Err(Error::invalid("operand belongs to a different tape"));
            }
        }
        let arity = match &primitive {
            Primitive::MatMul | Primitive::Add | Primitive::Sub | Primitive::Hadamard => Some(2),
            Primitive::ConcatRows | Primitive::ConcatCols => None,
            _ => Some(1),
        };
        if let Some(n) = arity {
            if operands.len() != n {
                return Err(Error::invalid(alloc::format!(
                    "{} expects {n} operands, got {}",
                    primitive.name(),
                    operands.len()
                )));
            }
        }
        if operands.is_empty() {
            return Err(Error::invalid(alloc::format!("{} needs operands", primitive.name())));
        }
        let vals: Vec<&Matrix> = operands.iter().map(|v| v.value.as_ref()).collect();
        let mut aux = None;
        let value = match &primitive {
            Primitive::MatMul => vals[0].matmul(vals[1])?,
            Primitive::Add => vals[0].add(vals[1])?,
            Primitive::Sub => vals[0].sub(vals[1])?,
            Primitive::Scale(s) => vals[0].scale(*s),
            Primitive::Hadamard => vals[0].hadamard(vals[1])?,
            Primitive::Transpose => vals[0].transpose(),
            Primitive::ConcatRows => Matrix::concat_rows(&vals)?,
            Primitive::SliceRows { start, end } => vals[0].slice_rows(*start, *end)?,
            Primitive::ConcatCols => Matrix::concat_cols(&vals)?,
            Primitive::SliceCols { start, end } => vals[0].slice_cols(*start, *end)?,
            Primitive::Activation(g) => g.apply(vals[0]),
            Primitive::SpdInverse => linalg::spd_inverse(vals[0])?,
            Primitive::SoftmaxXent { labels, col_weights } => {
                let (l, g) = loss::softmax_xent(vals[0], labels, col_weights.as_deref().map(|w| w.as_slice()))?;
                aux = Some(g);
                Matrix::filled(1, 1, l)
            }
            Primitive::Mse { labels, col_weights } => {
                let (l, g) = loss::mse(vals[0], labels, col_weights.as_deref().map(|w| w.as_slice()))?;
                aux = Some(g);
                Matrix::filled(1, 1, l)
            }
            Primitive::ReduceSum => Matrix::filled(1, 1, vals[0].sum()),
            Primitive::Gather { rows, cols, index } => {
                if index.len() != rows * cols {
                    return Err(Error::invalid("gather index length does not match its shape"));
                }
                let src = vals[0].data();
                let mut data = Vec::with_capacity(index.len());
                for &i in index.iter() {
                    if i == GATHER_ZERO {
                        data.push(0.0);
                    } else {
                        let i = i as usize;
                        if i >= src.len() {
                            return Err(Error::invalid("gather index out of range"));
                        }
                        data.push(src[i]);
                    }
                }
                Matrix::new(*rows, *cols, data)?
            }
        };
        let requires_grad = operands.iter().any(|v| self.nodes.borrow()[v.id].requires_grad);
        let ids = operands.iter().map(|v| v.id).collect();
        Ok(self.push(Op::Apply(primitive), ids, value, aux, requires_grad))
    }

    pub fn matmul<'a>(&'a self, a: &Var<'a>, b: &Var<'a>) -> Result<Var<'a>> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn add<'a>(&'a self, a: &Var<'a>, b: &Var<'a>) -> Result<Var<'a>> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub<'a>(&'a self, a: &Var<'a>, b: &Var<'a>) -> Result<Var<'a>> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn scale<'a>(&'a self, a: &Var<'a>, s: f64) -> Result<Var<'a>> {
        self.apply(Primitive::Scale(s), &[a])
    }

    pub fn hadamard<'a>(&'a self, a: &Var<'a>, b: &Var<'a>) -> Result<Var<'a>> {
        self.apply(Primitive::Hadamard, &[a, b])
    }

    pub fn transpose<'a>(&'a self, a: &Var<'a>) -> Result<Var<'a>> {
        self.apply(Primitive::Transpose, &[a])
    }

    pub fn concat_rows<'a>(&'a self, parts: &[&Var<'a>]) -> Result<Var<'a>> {
        if parts.len() == 1 {
            return Ok(parts[0].clone());
        }
        self.apply(Primitive::ConcatRows, parts)
    }

    pub fn concat_cols<'a>(&'a self, parts: &[&Var<'a>]) -> Result<Var<'a>> {
        if parts.len() == 1 {
            return Ok(parts[0].clone());
        }
        self.apply(Primitive::ConcatCols, parts)
    }

    pub fn slice_rows<'a>(&'a self, a: &Var<'a>, start: usize, end: usize) -> Result<Var<'a>> {
        self.apply(Primitive::SliceRows { start, end }, &[a])
    }

    pub fn slice_cols<'a>(&'a self, a: &Var<'a>, start: usize, end: usize) -> Result<Var<'a>> {
        self.apply(Primitive::SliceCols { start, end }, &[a])
    }

    pub fn activation<'a>(&'a self, a: &Var<'a>, g: Activation) -> Result<Var<'a>> {
        if g == Activation::Identity {
            return Ok(a.clone());
        }
        self.apply(Primitive::Activation(g), &[a])
    }

    pub fn spd_inverse<'a>(&'a self, a: &Var<'a>) -> Result<Var<'a>> {
        self.apply(Primitive::SpdInverse, &[a])
    }

    pub fn softmax_xent<'a>(&'a self, y: &Var<'a>, labels: &Matrix, col_weights: Option<&[f64]>) -> Result<Var<'a>> {
        self.apply(
            Primitive::SoftmaxXent {
                labels: Rc::new(labels.clone()),
                col_weights: col_weights.map(|w| Rc::new(w.to_vec())),
            },
            &[y],
        )
    }

    pub fn mse<'a>(&'a self, y: &Var<'a>, labels: &Matrix, col_weights: Option<&[f64]>) -> Result<Var<'a>> {
        self.apply(
            Primitive::Mse {
                labels: Rc::new(labels.clone()),
                col_weights: col_weights.map(|w| Rc::new(w.to_vec())),
            },
            &[y],
        )
    }

    pub fn reduce_sum<'a>(&'a self, a: &Var<'a>) -> Result<Var<'a>> {
        self.apply(Primitive::ReduceSum, &[a])
    }

    pub fn gather<'a>(&'a self, a: &Var<'a>, rows: usize, cols: usize, index: Rc<Vec<u32>>) -> Result<Var<'a>> {
        self.apply(Primitive::Gather { rows, cols, index }, &[a])
    }

    /// `T · B†` with the regularised pseudoinverse composed from tape
    /// primitives, using whichever branch has the smaller inverse.
    pub fn least_squares<'a>(&'a self, t: &Var<'a>, b: &Var<'a>, lambda: f64) -> Result<Var<'a>> {
        if !(lambda >= 0.0) {
            return Err(Error::invalid("regularisation must be non-negative"));
        }
        let (rows, cols) = b.shape();
        let bt = self.transpose(b)?;
        if rows < cols {
            let gram = self.matmul(b, &bt)?;
            let reg = self.constant(Matrix::diag(&vec![lambda; rows]));
            let inv = self.spd_inverse(&self.add(&gram, &reg)?).map_err(singular)?;
            self.matmul(&self.matmul(t, &bt)?, &inv)
        } else {
            let gram = self.matmul(&bt, b)?;
            let reg = self.constant(Matrix::diag(&vec![lambda; cols]));
            let inv = self.spd_inverse(&self.add(&gram, &reg)?).map_err(singular)?;
            self.matmul(&self.matmul(t, &inv)?, &bt)
        }
    }

    /// Reverse sweep from a scalar.
    pub fn backward(&self, loss: &Var<'_>) -> Result<Gradients> {
        if loss.shape() != (1, 1) {
            return Err(Error::invalid(alloc::format!(
                "backward needs a 1x1 loss, got {}x{}",
                loss.shape().0,
                loss.shape().1
            )));
        }
        self.backward_with_seed(loss, Matrix::ones(1, 1))
    }

    /// Reverse sweep from `out` with adjoint `seed` (a vector-Jacobian product).
    pub fn backward_with_seed(&self, out: &Var<'_>, seed: Matrix) -> Result<Gradients> {
        if seed.shape() != out.shape() {
            return Err(Error::shapes("backward", out.shape(), seed.shape()));
        }
        let nodes = self.nodes.borrow();
        let n = out.id + 1;
        let mut adj: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        adj[out.id] = Some(seed);
        for id in (0..n).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                adj[id] = None;
                continue;
            }
            let Op::Apply(prim) = &node.op else { continue };
            let Some(g) = adj[id].take() else { continue };
            let contribs = reverse_rule(prim, node, &nodes, &g)?;
            adj[id] = Some(g);
            for (k, c) in contribs.into_iter().enumerate() {
                let Some(c) = c else { continue };
                let op_id = node.operands[k];
                if !nodes[op_id].requires_grad {
                    continue;
                }
                match &mut adj[op_id] {
                    Some(existing) => existing.add_assign(&c)?,
                    slot @ None => *slot = Some(c),
                }
            }
        }
        let shapes = nodes.iter().map(|nd| nd.value.shape()).collect();
        Ok(Gradients { adjoints: adj, shapes })
    }
}

fn singular(e: Error) -> Error {
    match e {
        Error::Singular(_) => Error::Singular("least_squares"),
        other => other,
    }
}

/// Operand adjoints for one node given its output adjoint `g`.
fn reverse_rule(prim: &Primitive, node: &Node, nodes: &[Node], g: &Matrix) -> Result<Vec<Option<Matrix>>> {
    let val = |k: usize| -> &Matrix { nodes[node.operands[k]].value.as_ref() };
    let wants = |k: usize| nodes[node.operands[k]].requires_grad;
    Ok(match prim {
        Primitive::MatMul => {
            let a = if wants(0) { Some(matrix::matmul_nt(g, val(1))) } else { None };
            let b = if wants(1) { Some(matrix::matmul_tn(val(0), g)) } else { None };
            vec![a, b]
        }
        Primitive::Add => vec![Some(g.clone()), Some(g.clone())],
        Primitive::Sub => vec![Some(g.clone()), Some(g.scale(-1.0))],
        Primitive::Scale(s) => vec![Some(g.scale(*s))],
        Primitive::Hadamard => {
            let a = if wants(0) { Some(g.hadamard(val(1))?) } else { None };
            let b = if wants(1) { Some(g.hadamard(val(0))?) } else { None };
            vec![a, b]
        }
        Primitive::Transpose => vec![Some(g.transpose())],
        Primitive::ConcatRows => {
            let mut out = Vec::with_capacity(node.operands.len());
            let mut start = 0;
            for k in 0..node.operands.len() {
                let r = val(k).rows();
                out.push(if wants(k) { Some(g.slice_rows(start, start + r)?) } else { None });
                start += r;
            }
            out
        }
        Primitive::ConcatCols => {
            let mut out = Vec::with_capacity(node.operands.len());
            let mut start = 0;
            for k in 0..node.operands.len() {
                let c = val(k).cols();
                out.push(if wants(k) { Some(g.slice_cols(start, start + c)?) } else { None });
                start += c;
            }
            out
        }
        Primitive::SliceRows { start, end } => {
            let src = val(0);
            let mut full = Matrix::zeros(src.rows(), src.cols());
            let w = src.cols();
            full.data_mut()[start * w..end * w].copy_from_slice(g.data());
            vec![Some(full)]
        }
        Primitive::SliceCols { start, end } => {
            let src = val(0);
            let mut full = Matrix::zeros(src.rows(), src.cols());
            for r in 0..src.rows() {
                full.row_mut(r)[*start..*end].copy_from_slice(g.row(r));
            }
            vec![Some(full)]
        }
        Primitive::Activation(act) => {
            let d = match act {
                // Uses the recorded output: tanh' = 1 − tanh².
                Activation::Tanh => g.zip_map(&node.value, |gi, a| gi * (1.0 - a * a))?,
                _ => g.zip_map(val(0), |gi, s| gi * act.derivative(s))?,
            };
            vec![Some(d)]
        }
        Primitive::SpdInverse => {
            // d(A⁻¹) = −A⁻¹ dA A⁻¹, with A symmetric.
            let inv = node.value.as_ref();
            let t = matrix::matmul_nn(inv, g);
            vec![Some(matrix::matmul_nn(&t, inv).scale(-1.0))]
        }
        Primitive::SoftmaxXent { .. } | Primitive::Mse { .. } => {
            let grad = node.aux.as_ref().expect("loss nodes cache their gradient");
            vec![Some(grad.scale(g[(0, 0)]))]
        }
        Primitive::ReduceSum => {
            let (r, c) = val(0).shape();
            vec![Some(Matrix::filled(r, c, g[(0, 0)]))]
        }
        Primitive::Gather { index, .. } => {
            let (r, c) = val(0).shape();
            let mut full = Matrix::zeros(r, c);
            let dst = full.data_mut();
            for (&i, &gi) in index.iter().zip(g.data()) {
                if i != GATHER_ZERO {
                    dst[i as usize] += gi;
                }
            }
            vec![Some(full)]
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng64;

    /// Central-difference gradient of `f` at `x`.
    fn numeric(f: &dyn Fn(&Matrix) -> f64, x: &Matrix, h: f64) -> Matrix {
        let mut g = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            g.data_mut()[i] = (f(&p) - f(&m)) / (2.0 * h);
        }
        g
    }

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).unwrap().max_abs() / b.max_abs().max(1e-8)
    }

    /// Checks one unary construction `build(tape, x) -> scalar`.
    fn check_unary(x: Matrix, build: &dyn for<'a> Fn(&'a Tape, &Var<'a>) -> Var<'a>) {
        let tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let loss = build(&tape, &xv);
        let g = tape.backward(&loss).unwrap().get(&xv);
        let f = |m: &Matrix| {
            let t = Tape::new();
            let v = t.leaf(m.clone());
            build(&t, &v).value()[(0, 0)]
        };
        let fd = numeric(&f, &x, 1e-6);
        assert!(rel_err(&g, &fd) < 1e-6, "relative error {}", rel_err(&g, &fd));
    }

    /// Projects an arbitrary output onto a fixed random direction.
    fn project<'a>(t: &'a Tape, v: &Var<'a>, seed: u64) -> Var<'a> {
        let (r, c) = v.shape();
        let w = t.constant(Rng64::seed(seed).normal_matrix(r, c));
        t.reduce_sum(&t.hadamard(v, &w).unwrap()).unwrap()
    }

    #[test]
    fn tanh_of_zero() {
        let tape = Tape::new();
        let x = tape.leaf(Matrix::zeros(1, 1));
        assert_eq!(tape.activation(&x, Activation::Tanh).unwrap().value(), &Matrix::zeros(1, 1));
    }

    #[test]
    fn spd_inverse_of_scaled_identity() {
        let tape = Tape::new();
        let x = tape.leaf(Matrix::diag(&[2.0, 2.0]));
        let inv = tape.spd_inverse(&x).unwrap();
        assert!(inv.value().sub(&Matrix::diag(&[0.5, 0.5])).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn hadamard_product() {
        let tape = Tape::new();
        let a = tape.leaf(Matrix::from_rows(&[&[1.0, 2.0]]));
        let b = tape.leaf(Matrix::from_rows(&[&[3.0, 4.0]]));
        assert_eq!(tape.hadamard(&a, &b).unwrap().value(), &Matrix::from_rows(&[&[3.0, 8.0]]));
    }

    #[test]
    fn reduce_sum_adjoint_is_ones() {
        let tape = Tape::new();
        let x = tape.leaf(Matrix::zeros(2, 2));
        let l = tape.reduce_sum(&x).unwrap();
        assert_eq!(tape.backward(&l).unwrap().get(&x), Matrix::ones(2, 2));
    }

    #[test]
    fn square_adjoint() {
        let tape = Tape::new();
        let x = tape.leaf(Matrix::filled(1, 1, 3.0));
        let l = tape.reduce_sum(&tape.hadamard(&x, &x).unwrap()).unwrap();
        assert_eq!(tape.backward(&l).unwrap().get(&x), Matrix::filled(1, 1, 6.0));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Matrix::zeros(2, 1));
        assert!(matches!(tape.backward(&x), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let tape = Tape::new();
        let a = tape.leaf(Matrix::zeros(2, 3));
        let b = tape.leaf(Matrix::zeros(2, 3));
        assert!(matches!(tape.matmul(&a, &b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn spd_inverse_of_indefinite_is_singular() {
        let tape = Tape::new();
        let a = tape.leaf(Matrix::diag(&[1.0, -1.0]));
        assert!(matches!(tape.spd_inverse(&a), Err(Error::Singular(_))));
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut rng = Rng64::seed(31);
        let x = rng.normal_matrix(3, 4);
        let other = rng.normal_matrix(3, 4);
        let right = rng.normal_matrix(4, 2);

        check_unary(x.clone(), &|t, v| {
            let c = t.constant(right.clone());
            project(t, &t.matmul(v, &c).unwrap(), 1)
        });
        check_unary(right.clone(), &|t, v| {
            let c = t.constant(x.clone());
            project(t, &t.matmul(&c, v).unwrap(), 2)
        });
        check_unary(x.clone(), &|t, v| {
            let c = t.constant(other.clone());
            project(t, &t.add(v, &c).unwrap(), 3)
        });
        check_unary(x.clone(), &|t, v| {
            let c = t.constant(other.clone());
            project(t, &t.sub(&c, v).unwrap(), 4)
        });
        check_unary(x.clone(), &|t, v| project(t, &t.scale(v, -2.5).unwrap(), 5));
        check_unary(x.clone(), &|t, v| project(t, &t.transpose(v).unwrap(), 6));
        check_unary(x.clone(), &|t, v| {
            let c = t.constant(other.clone());
            project(t, &t.concat_rows(&[&c, v, v]).unwrap(), 7)
        });
        check_unary(x.clone(), &|t, v| {
            let c = t.constant(other.clone());
            project(t, &t.concat_cols(&[v, &c]).unwrap(), 8)
        });
        check_unary(x.clone(), &|t, v| project(t, &t.slice_rows(v, 1, 3).unwrap(), 9));
        check_unary(x.clone(), &|t, v| project(t, &t.slice_cols(v, 0, 2).unwrap(), 10));
        check_unary(x.clone(), &|t, v| project(t, &t.activation(v, Activation::Tanh).unwrap(), 11));
        // Keep lrelu inputs away from the kink.
        let away = x.map(|v| if v.abs() < 0.1 { v + 0.3 } else { v });
        check_unary(away, &|t, v| project(t, &t.activation(v, Activation::LRelu).unwrap(), 12));
        let spd = rng.normal_matrix(3, 5).gram().add(&Matrix::identity(3)).unwrap();
        check_unary(spd, &|t, v| {
            // Symmetrise first so off-diagonal perturbations stay symmetric.
            let s = t.scale(&t.add(v, &t.transpose(v).unwrap()).unwrap(), 0.5).unwrap();
            project(t, &t.spd_inverse(&s).unwrap(), 13)
        });
        let labels = Matrix::from_fn(3, 4, |r, c| if (r + c) % 3 == 0 { 1.0 } else { 0.0 });
        check_unary(x.clone(), &|t, v| t.softmax_xent(v, &labels, None).unwrap());
        check_unary(x.clone(), &|t, v| t.softmax_xent(v, &labels, Some(&[1.0, 0.0, 1.0, 1.0])).unwrap());
        check_unary(x.clone(), &|t, v| t.mse(v, &other, None).unwrap());
        check_unary(x.clone(), &|t, v| t.reduce_sum(v).unwrap());
        let index = Rc::new(vec![0u32, 5, GATHER_ZERO, 5, 11, 2]);
        check_unary(x.clone(), &|t, v| project(t, &t.gather(v, 2, 3, index.clone()).unwrap(), 14));
    }

    #[test]
    fn three_node_graph_matches_finite_differences() {
        let mut rng = Rng64::seed(32);
        let a = rng.normal_matrix(3, 3);
        let b = rng.normal_matrix(3, 2);
        let build = |t: &Tape, av: &Matrix, bv: &Matrix| -> f64 {
            let a = t.leaf(av.clone());
            let b = t.leaf(bv.clone());
            let s = t.activation(&t.matmul(&a, &b).unwrap(), Activation::Tanh).unwrap();
            t.reduce_sum(&t.hadamard(&s, &s).unwrap()).unwrap().value()[(0, 0)]
        };
        let tape = Tape::new();
        let av = tape.leaf(a.clone());
        let bv = tape.leaf(b.clone());
        let s = tape.activation(&tape.matmul(&av, &bv).unwrap(), Activation::Tanh).unwrap();
        let l = tape.reduce_sum(&tape.hadamard(&s, &s).unwrap()).unwrap();
        let grads = tape.backward(&l).unwrap();
        let fa = numeric(&|m| build(&Tape::new(), m, &b), &a, 1e-6);
        let fb = numeric(&|m| build(&Tape::new(), &a, m), &b, 1e-6);
        assert!(rel_err(&grads.get(&av), &fa) < 1e-6);
        assert!(rel_err(&grads.get(&bv), &fb) < 1e-6);
    }

    #[test]
    fn least_squares_matches_direct_pinv_both_branches() {
        let mut rng = Rng64::seed(33);
        for &(r, c) in &[(3, 7), (6, 4)] {
            let b = rng.normal_matrix(r, c);
            let t = rng.normal_matrix(2, c);
            let tape = Tape::new();
            let w = tape.least_squares(&tape.leaf(t.clone()), &tape.leaf(b.clone()), 0.01).unwrap();
            let direct = t.matmul(&linalg::reg_pseudoinverse(&b, 0.01).unwrap()).unwrap();
            assert!(w.value().relative_distance(&direct, 1e-300) < 1e-10);
        }
    }

    #[test]
    fn constants_get_no_adjoint() {
        let tape = Tape::new();
        let c = tape.constant(Matrix::ones(2, 2));
        let x = tape.leaf(Matrix::ones(2, 2));
        let l = tape.reduce_sum(&tape.hadamard(&c, &x).unwrap()).unwrap();
        let g = tape.backward(&l).unwrap();
        assert_eq!(g.get(&c), Matrix::zeros(2, 2));
        assert_eq!(g.get(&x), Matrix::ones(2, 2));
    }

    #[test]
    fn evaluation_is_deterministic() {
        let run = || {
            let mut rng = Rng64::seed(34);
            let tape = Tape::new();
            let t = tape.leaf(rng.normal_matrix(2, 5));
            let b = tape.leaf(rng.normal_matrix(3, 5));
            let w = tape.least_squares(&t, &b, 0.1).unwrap();
            let l = tape.reduce_sum(&tape.hadamard(&w, &w).unwrap()).unwrap();
            let g = tape.backward(&l).unwrap();
            (l.value().clone(), g.get(&t), g.get(&b))
        };
        assert_eq!(run(), run());
    }
}
