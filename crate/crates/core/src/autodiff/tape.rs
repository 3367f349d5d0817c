//! Wengert-list reverse-mode differentiation over row-major `f64` matrices.
//!
//! Every quantity is a 2-D array: a batch of row vectors (`rows × cols`) or a
//! `1 × 1` scalar. Nodes are appended in evaluation order, so the arena index
//! is already a topological order and `backward` is a single reverse sweep.

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    Concat(Vec<Var>),
    Slice(Var, usize),
    RowSum(Var),
    Sum(Var),
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b)
            | Op::AddRow(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MulCol(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Clamp(a, _, _)
            | Op::Slice(a, _)
            | Op::RowSum(a)
            | Op::Sum(a) => vec![*a],
            Op::Concat(parts) => parts.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Arena holding one forward computation and, after [`Tape::backward`], the
/// gradients of a scalar root with respect to every node.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Array2<f64>>>,
}

fn shape_str(a: &Array2<f64>) -> String {
    format!("{}x{}", a.nrows(), a.ncols())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf treated as a constant: gradients still flow through ops that
    /// consume it, but never into it.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` root with respect to `v`; `None` if no
    /// gradient reached it.
    pub fn grad(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn same_shape(&self, context: &'static str, a: Var, b: Var) -> Result<()> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(Error::shape(context, shape_str(va), shape_str(vb)));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::shape(
                "matmul",
                format!("{} inner dim", va.ncols()),
                format!("{} rows", vb.nrows()),
            ));
        }
        let out = va.dot(vb);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `x + bias` with `bias` (`1 × cols`) broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.nrows() != 1 || vb.ncols() != vx.ncols() {
            return Err(Error::shape(
                "add_row",
                format!("1x{}", vx.ncols()),
                shape_str(vb),
            ));
        }
        let out = vx + vb;
        Ok(self.push(out, Op::AddRow(x, bias)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a) + self.value(b);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a) - self.value(b);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a) * self.value(b);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Scales each row of `x` by the matching entry of the column `w` (`rows × 1`).
    pub fn mul_col(&mut self, x: Var, w: Var) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        if vw.ncols() != 1 || vw.nrows() != vx.nrows() {
            return Err(Error::shape(
                "mul_col",
                format!("{}x1", vx.nrows()),
                shape_str(vw),
            ));
        }
        let out = vx * vw;
        Ok(self.push(out, Op::MulCol(x, w)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        self.push(out, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// `a + c` for a scalar constant `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) + c;
        self.push(out, Op::Offset(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::exp);
        self.push(out, Op::Exp(a))
    }

    /// Elementwise clamp; the gradient is passed through where the input lies
    /// inside `[lo, hi]` and zeroed elsewhere.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).mapv(|v| v.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    /// Column-wise concatenation of equally tall blocks.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Usage("concat of zero parts".into()))?;
        let rows = self.value(*first).nrows();
        let mut cols = 0;
        for p in parts {
            let v = self.value(*p);
            if v.nrows() != rows {
                return Err(Error::shape("concat", format!("{rows} rows"), shape_str(v)));
            }
            cols += v.ncols();
        }
        let mut out = Array2::zeros((rows, cols));
        let mut at = 0;
        for p in parts {
            let v = self.value(*p);
            out.slice_mut(s![.., at..at + v.ncols()]).assign(v);
            at += v.ncols();
        }
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a);
        if start >= end || end > v.ncols() {
            return Err(Error::shape(
                "slice_cols",
                format!("range within 0..{}", v.ncols()),
                format!("{start}..{end}"),
            ));
        }
        let out = v.slice(s![.., start..end]).to_owned();
        Ok(self.push(out, Op::Slice(a, start)))
    }

    /// Per-row sum, `rows × 1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(out, Op::RowSum(a))
    }

    /// Sum of all entries, `1 × 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), total), Op::Sum(a))
    }

    /// Per-row squared norm, `rows × 1`.
    pub fn row_sq_norm(&mut self, a: Var) -> Result<Var> {
        let sq = self.mul(a, a)?;
        Ok(self.row_sum(sq))
    }

    /// `Σ_rows ‖a_row‖²`, `1 × 1`.
    pub fn sum_sq(&mut self, a: Var) -> Result<Var> {
        let sq = self.mul(a, a)?;
        Ok(self.sum(sq))
    }

    /// Populates gradients of the scalar `root` with respect to every node.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let rv = self.value(root);
        if rv.dim() != (1, 1) {
            return Err(Error::Usage(format!(
                "backward requires a scalar root, got {}",
                shape_str(rv)
            )));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::ones((1, 1)));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = Some(g);
                continue;
            }
            let needs = |v: &Var| self.nodes[v.0].requires_grad;
            let mut contrib: Vec<(Var, Array2<f64>)> = Vec::with_capacity(2);
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if needs(a) {
                        contrib.push((*a, g.dot(&self.value(*b).t())));
                    }
                    if needs(b) {
                        contrib.push((*b, self.value(*a).t().dot(&g)));
                    }
                }
                Op::AddRow(x, bias) => {
                    if needs(bias) {
                        contrib.push((*bias, g.sum_axis(Axis(0)).insert_axis(Axis(0))));
                    }
                    if needs(x) {
                        contrib.push((*x, g.clone()));
                    }
                }
                Op::Add(a, b) => {
                    if needs(a) {
                        contrib.push((*a, g.clone()));
                    }
                    if needs(b) {
                        contrib.push((*b, g.clone()));
                    }
                }
                Op::Sub(a, b) => {
                    if needs(a) {
                        contrib.push((*a, g.clone()));
                    }
                    if needs(b) {
                        contrib.push((*b, -&g));
                    }
                }
                Op::Mul(a, b) => {
                    if needs(a) {
                        contrib.push((*a, &g * self.value(*b)));
                    }
                    if needs(b) {
                        contrib.push((*b, &g * self.value(*a)));
                    }
                }
                Op::MulCol(x, w) => {
                    if needs(x) {
                        contrib.push((*x, &g * self.value(*w)));
                    }
                    if needs(w) {
                        let gw = (&g * self.value(*x)).sum_axis(Axis(1)).insert_axis(Axis(1));
                        contrib.push((*w, gw));
                    }
                }
                Op::Scale(a, c) => contrib.push((*a, &g * *c)),
                Op::Offset(a) => contrib.push((*a, g.clone())),
                Op::Tanh(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d)
                        .and(&node.value)
                        .for_each(|d, &y| *d *= 1.0 - y * y);
                    contrib.push((*a, d));
                }
                Op::Sigmoid(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d)
                        .and(&node.value)
                        .for_each(|d, &y| *d *= y * (1.0 - y));
                    contrib.push((*a, d));
                }
                Op::Exp(a) => contrib.push((*a, &g * &node.value)),
                Op::Clamp(a, lo, hi) => {
                    let mut d = g.clone();
                    Zip::from(&mut d)
                        .and(self.value(*a))
                        .for_each(|d, &x| {
                            if x < *lo || x > *hi {
                                *d = 0.0;
                            }
                        });
                    contrib.push((*a, d));
                }
                Op::Concat(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        if needs(p) {
                            contrib.push((*p, g.slice(s![.., at..at + w]).to_owned()));
                        }
                        at += w;
                    }
                }
                Op::Slice(a, start) => {
                    let src = self.value(*a);
                    let mut d = Array2::zeros(src.dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    contrib.push((*a, d));
                }
                Op::RowSum(a) => {
                    let cols = self.value(*a).ncols();
                    let d = g
                        .broadcast((g.nrows(), cols))
                        .expect("row_sum grad broadcast")
                        .to_owned();
                    contrib.push((*a, d));
                }
                Op::Sum(a) => {
                    let dim = self.value(*a).dim();
                    contrib.push((*a, Array2::from_elem(dim, g[[0, 0]])));
                }
            }
            grads[i] = Some(g);
            for (p, d) in contrib {
                match &mut grads[p.0] {
                    Some(acc) => *acc += &d,
                    slot @ None => *slot = Some(d),
                }
            }
        }
        self.grads = grads;
        Ok(())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sum_of_squares_gradient_is_twice_the_parameter() {
        let mut tape = Tape::new();
        let p = tape.param(array![[0.5, -1.5], [2.0, 0.25]]);
        let loss = tape.sum_sq(p).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(p).unwrap();
        assert_eq!(g, &(tape.value(p) * 2.0));
        assert_eq!(tape.grad(loss).unwrap()[[0, 0]], 1.0);
    }

    #[test]
    fn constant_root_leaves_parameters_without_gradient() {
        let mut tape = Tape::new();
        let p = tape.param(array![[1.0, 2.0]]);
        let c = tape.constant(array![[3.0, 4.0]]);
        let root = tape.sum(c);
        tape.backward(root).unwrap();
        assert!(tape.grad(p).map_or(true, |g| g.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::new();
        let p = tape.param(array![[1.0, 2.0]]);
        assert!(matches!(tape.backward(p), Err(Error::Usage(_))));
    }

    #[test]
    fn mismatched_shapes_are_reported() {
        let mut tape = Tape::new();
        let a = tape.param(array![[1.0, 2.0]]);
        let b = tape.param(array![[1.0, 2.0, 3.0]]);
        assert!(matches!(tape.add(a, b), Err(Error::Shape { .. })));
        assert!(matches!(tape.matmul(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn shared_subexpressions_accumulate() {
        // f = sum(p * p + p) -> df/dp = 2p + 1
        let mut tape = Tape::new();
        let p = tape.param(array![[1.0, -2.0, 3.0]]);
        let sq = tape.mul(p, p).unwrap();
        let y = tape.add(sq, p).unwrap();
        let f = tape.sum(y);
        tape.backward(f).unwrap();
        assert_eq!(tape.grad(p).unwrap(), &array![[3.0, -3.0, 7.0]]);
    }

    #[test]
    fn clamp_blocks_gradient_outside_bounds() {
        let mut tape = Tape::new();
        let p = tape.param(array![[-3.0, 0.5, 3.0]]);
        let c = tape.clamp(p, -1.0, 1.0);
        let f = tape.sum(c);
        tape.backward(f).unwrap();
        assert_eq!(tape.grad(p).unwrap(), &array![[0.0, 1.0, 0.0]]);
    }
}
