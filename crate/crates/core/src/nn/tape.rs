//! Reverse-mode automatic differentiation over row-major matrices.
//!
//! Every node holds an `Array2<f64>`; batches are rows. Scalars are `1x1`.
//! Binary elementwise ops broadcast a `1xn` row, an `nx1` column or a `1x1`
//! scalar against the other operand, and the backward pass sums the gradient
//! back down to the operand's shape.

use ndarray::{Array2, Axis, Zip};

use crate::error::{shape_err, Error, Result};

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
    /// `x · wᵀ`, with `x: B×in` and `w: out×in`.
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Min(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    MulConst(Var, Array2<f64>),
    AddConst(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Abs(Var),
    Square(Var),
    MinConst(Var, f64),
    Concat(Vec<Var>),
    Slice(Var, usize, usize),
    RowSum(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Operation recorder for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`. Nodes the loss does not
    /// depend on get an all-zero gradient of the node's shape.
    pub fn wrt(&self, var: Var) -> Array2<f64> {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(self.shapes[var.0]),
        }
    }

    pub fn take(&mut self, var: Var) -> Array2<f64> {
        match self.grads[var.0].take() {
            Some(g) => g,
            None => Array2::zeros(self.shapes[var.0]),
        }
    }

    pub fn is_reachable(&self, var: Var) -> bool {
        self.grads[var.0].is_some()
    }
}

fn dims(a: &Array2<f64>) -> (usize, usize) {
    a.dim()
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

/// Sum `grad` down to `shape` along broadcast axes.
fn unbroadcast(grad: Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut g = grad;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
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

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        dims(&self.nodes[v.0].value)
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.1 != ws.1 {
            return Err(shape_err(
                "matmul_t",
                format!("inner dim {}", ws.1),
                format!("{}x{}", xs.0, xs.1),
            ));
        }
        let value = self.value(x).dot(&self.value(w).t());
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(value, Op::MatMulT(x, w), rg))
    }

    fn binary_shape(&self, context: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        match (broadcast_dim(sa.0, sb.0), broadcast_dim(sa.1, sb.1)) {
            (Some(r), Some(c)) => Ok((r, c)),
            _ => Err(shape_err(
                context,
                format!("{}x{}", sa.0, sa.1),
                format!("{}x{}", sb.0, sb.1),
            )),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape("add", a, b)?;
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape("sub", a, b)?;
        let value = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape("mul", a, b)?;
        let value = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape("div", a, b)?;
        let value = self.value(a) / self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Div(a, b), rg))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(
                "min",
                format!("{}x{}", sa.0, sa.1),
                format!("{}x{}", sb.0, sb.1),
            ));
        }
        let mut value = self.value(a).clone();
        Zip::from(&mut value)
            .and(self.value(b))
            .for_each(|x, &y| *x = x.min(y));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Min(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) + c;
        let rg = self.rg(a);
        self.push(value, Op::Shift(a), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// Elementwise product with a constant matrix (broadcast allowed).
    pub fn mul_const(&mut self, a: Var, c: Array2<f64>) -> Result<Var> {
        let sa = self.shape(a);
        if broadcast_dim(sa.0, c.nrows()) != Some(sa.0) || broadcast_dim(sa.1, c.ncols()) != Some(sa.1)
        {
            return Err(shape_err(
                "mul_const",
                format!("{}x{}", sa.0, sa.1),
                format!("{}x{}", c.nrows(), c.ncols()),
            ));
        }
        let value = self.value(a) * &c;
        let rg = self.rg(a);
        Ok(self.push(value, Op::MulConst(a, c), rg))
    }

    pub fn add_const(&mut self, a: Var, c: Array2<f64>) -> Result<Var> {
        let sa = self.shape(a);
        if broadcast_dim(sa.0, c.nrows()) != Some(sa.0) || broadcast_dim(sa.1, c.ncols()) != Some(sa.1)
        {
            return Err(shape_err(
                "add_const",
                format!("{}x{}", sa.0, sa.1),
                format!("{}x{}", c.nrows(), c.ncols()),
            ));
        }
        let value = self.value(a) + &c;
        let rg = self.rg(a);
        Ok(self.push(value, Op::AddConst(a), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).mapv(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// `min(a, c)` against a constant ceiling.
    pub fn min_const(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x.min(c), Op::MinConst(a, c))
    }

    /// Column-wise concatenation of same-height operands.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.shape(p).0,
            None => return Err(Error::InvalidArgument("concat of zero parts".into())),
        };
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(shape_err("concat", format!("{rows} rows"), format!("{} rows", s.0)));
            }
            cols += s.1;
        }
        let mut value = Array2::zeros((rows, cols));
        let mut at = 0;
        for &p in parts {
            let w = self.shape(p).1;
            value
                .slice_mut(ndarray::s![.., at..at + w])
                .assign(self.value(p));
            at += w;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a);
        if start >= end || end > s.1 {
            return Err(shape_err(
                "slice_cols",
                format!("range within 0..{}", s.1),
                format!("{start}..{end}"),
            ));
        }
        let value = self.value(a).slice(ndarray::s![.., start..end]).to_owned();
        let rg = self.rg(a);
        Ok(self.push(value, Op::Slice(a, start, end), rg))
    }

    /// Per-row sum, `B×n → B×1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(a);
        self.push(value, Op::RowSum(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let value = Array2::from_elem((1, 1), self.value(a).sum() / n);
        let rg = self.rg(a);
        self.push(value, Op::Mean(a), rg)
    }

    /// Reverse sweep from a `1x1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let (rows, cols) = self.shape(loss);
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarLoss { rows, cols });
        }
        let shapes: Vec<_> = self.nodes.iter().map(|n| dims(&n.value)).collect();
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = Some(g);
                continue;
            }
            let mut acc = |v: Var, d: Array2<f64>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                let d = unbroadcast(d, shapes[v.0]);
                match &mut grads[v.0] {
                    Some(existing) => *existing += &d,
                    slot @ None => *slot = Some(d),
                }
            };
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMulT(x, w) => {
                    if self.nodes[x.0].requires_grad {
                        acc(*x, g.dot(val(*w)));
                    }
                    if self.nodes[w.0].requires_grad {
                        acc(*w, g.t().dot(val(*x)));
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, -&g);
                }
                Op::Mul(a, b) => {
                    acc(*a, &g * val(*b));
                    acc(*b, &g * val(*a));
                }
                Op::Div(a, b) => {
                    let bv = val(*b);
                    acc(*a, &g / bv);
                    let da = -(&g * val(*a)) / (bv * bv);
                    acc(*b, da);
                }
                Op::Min(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let mut ga = g.clone();
                    let mut gb = g.clone();
                    Zip::from(&mut ga)
                        .and(&mut gb)
                        .and(av)
                        .and(bv)
                        .for_each(|ga, gb, &x, &y| {
                            if x <= y {
                                *gb = 0.0;
                            } else {
                                *ga = 0.0;
                            }
                        });
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::Scale(a, c) => acc(*a, &g * *c),
                Op::Shift(a) => acc(*a, g.clone()),
                Op::MulConst(a, c) => acc(*a, &g * c),
                Op::AddConst(a) => acc(*a, g.clone()),
                Op::Relu(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d)
                        .and(val(*a))
                        .for_each(|d, &x| {
                            if x <= 0.0 {
                                *d = 0.0
                            }
                        });
                    acc(*a, d);
                }
                Op::Tanh(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d)
                        .and(&node.value)
                        .for_each(|d, &y| *d *= 1.0 - y * y);
                    acc(*a, d);
                }
                Op::Exp(a) => acc(*a, &g * &node.value),
                Op::Log(a) => acc(*a, &g / val(*a)),
                Op::Softplus(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d)
                        .and(val(*a))
                        .for_each(|d, &x| *d *= sigmoid(x));
                    acc(*a, d);
                }
                Op::Abs(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(val(*a)).for_each(|d, &x| {
                        *d *= if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    acc(*a, d);
                }
                Op::Square(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(val(*a)).for_each(|d, &x| *d *= 2.0 * x);
                    acc(*a, d);
                }
                Op::MinConst(a, c) => {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(val(*a)).for_each(|d, &x| {
                        if x > *c {
                            *d = 0.0
                        }
                    });
                    acc(*a, d);
                }
                Op::Concat(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = shapes[p.0].1;
                        acc(p, g.slice(ndarray::s![.., at..at + w]).to_owned());
                        at += w;
                    }
                }
                Op::Slice(a, start, end) => {
                    let mut d = Array2::zeros(shapes[a.0]);
                    d.slice_mut(ndarray::s![.., *start..*end]).assign(&g);
                    acc(*a, d);
                }
                Op::RowSum(a) => {
                    let d = Array2::from_shape_fn(shapes[a.0], |(r, _)| g[[r, 0]]);
                    acc(*a, d);
                }
                Op::Sum(a) => acc(*a, Array2::from_elem(shapes[a.0], g[[0, 0]])),
                Op::Mean(a) => {
                    let n = (shapes[a.0].0 * shapes[a.0].1) as f64;
                    acc(*a, Array2::from_elem(shapes[a.0], g[[0, 0]] / n));
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }
}
