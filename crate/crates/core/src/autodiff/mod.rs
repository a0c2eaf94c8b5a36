//! Minimal reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records operations as they execute. Nodes are appended in
//! evaluation order, so walking them backwards is a valid reverse
//! topological order; gradients of nodes with several consumers are summed.
//! Fused operations (the losses) plug in through [`Function`].

mod gradcheck;
mod layers;
mod params;

use std::fmt;
use std::rc::Rc;

use ndarray::{concatenate, s, Array2, Axis, Zip};

pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{
    bidirectional_gru, dense, dropout, gru_cell, reparameterize, Activation, BiGruOutput,
    GruParams, GruVars, Mode,
};
pub use params::{ParamGrads, ParamId, ParamSet};

use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation with a hand-written vector-Jacobian product.
pub trait Function: fmt::Debug {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Array2<f64>]) -> Result<Array2<f64>>;

    /// Gradients of the loss with respect to each input, given the gradient
    /// `grad` with respect to the output.
    fn backward(
        &self,
        inputs: &[&Array2<f64>],
        output: &Array2<f64>,
        grad: &Array2<f64>,
    ) -> Vec<Array2<f64>>;
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `scale * x + shift`; only the scale matters for the gradient.
    Affine(Var, f64),
    MulConst(Var, Rc<Array2<f64>>),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    /// Sigmoid on flagged columns, identity elsewhere.
    SigmoidColumns(Var, Rc<Vec<bool>>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    Sum(Var),
    Custom(Box<dyn Function>, Vec<Var>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Recording of one forward computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    relu_pattern: Vec<bool>,
}

fn shape(a: &Array2<f64>) -> (usize, usize) {
    a.dim()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Activation pattern of every ReLU evaluated so far (input > 0).
    pub fn relu_pattern(&self) -> &[bool] {
        &self.relu_pattern
    }

    /// Constant input; receives no gradient outside this graph.
    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        self.push(params.value(id).clone(), Op::Param(id))
    }

    pub fn param_named(&mut self, params: &ParamSet, name: &str) -> Result<Var> {
        let id = params
            .id(name)
            .ok_or_else(|| Error::input(format!("unknown parameter {name}")))?;
        Ok(self.param(params, id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.ncols() != y.nrows() {
            return Err(Error::Shape {
                op: "matmul",
                left: shape(x),
                right: shape(y),
            });
        }
        let out = x.dot(y);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Adds a `1 x n` row vector to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (v, b) = (self.value(x), self.value(bias));
        if b.nrows() != 1 || b.ncols() != v.ncols() {
            return Err(Error::Shape {
                op: "add_bias",
                left: shape(v),
                right: shape(b),
            });
        }
        let out = v + b;
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (x, y) = (self.value(a), self.value(b));
        if x.dim() != y.dim() {
            return Err(Error::Shape {
                op,
                left: shape(x),
                right: shape(y),
            });
        }
        Ok(())
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

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a) * self.value(b);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(x).mapv(|v| scale * v + shift);
        self.push(out, Op::Affine(x, scale))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.affine(x, factor, 0.0)
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, x: Var, c: Rc<Array2<f64>>) -> Result<Var> {
        let v = self.value(x);
        if v.dim() != c.dim() {
            return Err(Error::Shape {
                op: "mul_const",
                left: shape(v),
                right: c.dim(),
            });
        }
        let out = v * &*c;
        Ok(self.push(out, Op::MulConst(x, c)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = &self.nodes[x.0].value;
        self.relu_pattern.extend(v.iter().map(|&a| a > 0.0));
        let out = v.mapv(|a| a.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(f64::tanh);
        self.push(out, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(f64::exp);
        self.push(out, Op::Exp(x))
    }

    pub fn sigmoid_columns(&mut self, x: Var, columns: Rc<Vec<bool>>) -> Result<Var> {
        let v = self.value(x);
        if v.ncols() != columns.len() {
            return Err(Error::Shape {
                op: "sigmoid_columns",
                left: shape(v),
                right: (1, columns.len()),
            });
        }
        let mut out = v.clone();
        for mut row in out.outer_iter_mut() {
            for (a, &flag) in row.iter_mut().zip(columns.iter()) {
                if flag {
                    *a = sigmoid(*a);
                }
            }
        }
        Ok(self.push(out, Op::SigmoidColumns(x, columns)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::input("concat of no tensors"));
        };
        let rows = self.value(first).nrows();
        for &p in parts {
            if self.value(p).nrows() != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: self.shape(first),
                    right: self.shape(p),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = concatenate(Axis(1), &views).expect("rows checked");
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Stacks nodes of equal width vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::input("concat of no tensors"));
        };
        let cols = self.value(first).ncols();
        for &p in parts {
            if self.value(p).ncols() != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    left: self.shape(first),
                    right: self.shape(p),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = concatenate(Axis(0), &views).expect("columns checked");
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(x);
        if start > end || end > v.ncols() {
            return Err(Error::Shape {
                op: "slice_cols",
                left: shape(v),
                right: (start, end),
            });
        }
        let out = v.slice(s![.., start..end]).to_owned();
        Ok(self.push(out, Op::SliceCols(x, start, end)))
    }

    /// Sum of all entries as a `1 x 1` node.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    pub fn apply(&mut self, f: Box<dyn Function>, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Array2<f64>> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = f.forward(&values)?;
        Ok(self.push(out, Op::Custom(f, inputs.to_vec())))
    }

    /// Weighted sum of `1 x 1` nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for &(v, w) in terms {
            if self.shape(v) != (1, 1) {
                return Err(Error::Shape {
                    op: "weighted_sum",
                    left: self.shape(v),
                    right: (1, 1),
                });
            }
            let scaled = self.scale(v, w);
            acc = Some(match acc {
                None => scaled,
                Some(a) => self.add(a, scaled)?,
            });
        }
        acc.ok_or_else(|| Error::input("weighted sum of no terms"))
    }

    /// Reverse pass from a `1 x 1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.shape(output) != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                left: self.shape(output),
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Array2::ones((1, 1)));

        fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input | Op::Param(_) => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddBias(x, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *b, gb);
                    accumulate(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, -&g);
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Affine(x, scale) => accumulate(&mut grads, *x, g * *scale),
                Op::MulConst(x, c) => accumulate(&mut grads, *x, g * &**c),
                Op::Relu(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx).and(self.value(*x)).for_each(|d, &a| {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(&node.value)
                        .for_each(|d, &y| *d *= y * (1.0 - y));
                    accumulate(&mut grads, *x, gx);
                }
                Op::Tanh(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(&node.value)
                        .for_each(|d, &y| *d *= 1.0 - y * y);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Exp(x) => {
                    let gx = g * &node.value;
                    accumulate(&mut grads, *x, gx);
                }
                Op::SigmoidColumns(x, flags) => {
                    let mut gx = g;
                    for (mut grow, yrow) in gx.outer_iter_mut().zip(node.value.outer_iter()) {
                        for ((d, &y), &flag) in grow.iter_mut().zip(yrow.iter()).zip(flags.iter()) {
                            if flag {
                                *d *= y * (1.0 - y);
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        accumulate(
                            &mut grads,
                            p,
                            g.slice(s![.., offset..offset + w]).to_owned(),
                        );
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        accumulate(
                            &mut grads,
                            p,
                            g.slice(s![offset..offset + h, ..]).to_owned(),
                        );
                        offset += h;
                    }
                }
                Op::SliceCols(x, start, end) => {
                    let mut gx = Array2::zeros(self.value(*x).raw_dim());
                    gx.slice_mut(s![.., *start..*end]).assign(&g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sum(x) => {
                    let gx = Array2::from_elem(self.value(*x).raw_dim(), g[[0, 0]]);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Custom(f, inputs) => {
                    let values: Vec<&Array2<f64>> = inputs.iter().map(|&v| self.value(v)).collect();
                    let gs = f.backward(&values, &node.value, &g);
                    debug_assert_eq!(
                        gs.len(),
                        inputs.len(),
                        "{} returned wrong gradient count",
                        f.name()
                    );
                    for (&v, gv) in inputs.iter().zip(gs) {
                        accumulate(&mut grads, v, gv);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Gradients of every parameter leaf, summed per parameter.
    pub fn param_grads(&self, grads: &Gradients, params: &ParamSet) -> ParamGrads {
        let mut out = ParamGrads::zeros_like(params);
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.grads[i]) {
                out.accumulate(*id, g);
            }
        }
        out
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of a leaf (input or parameter) node, if it influenced the output.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}
