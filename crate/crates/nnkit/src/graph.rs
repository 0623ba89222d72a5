//! Tape-based reverse-mode differentiation over dense 2-D matrices.
//!
//! Every value is an `f64` matrix; vectors are `1 x n` rows and scalars are
//! `1 x 1`. A [`Graph`] borrows a [`ParamStore`] so parameter nodes read
//! their values in place, and [`Graph::backward`] returns gradients keyed by
//! [`ParamId`].
//!
//! Recurrent layers are a single fused node (see [`crate::gru`]) so a 300-step
//! sequence costs one tape entry instead of thousands.

use std::collections::HashMap;

use ndarray::{concatenate, s, Array2, Axis};

use crate::error::{NnError, Result};
use crate::gru::{self, GruCache};

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Handle to a trainable matrix in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable matrices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}

/// Gradients of a scalar loss with respect to each parameter touched by the graph.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Mat)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn global_norm(&self) -> f64 {
        self.iter()
            .map(|(_, g)| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.mapv_inplace(|x| x * factor);
        }
    }
}

enum Op {
    Param(ParamId),
    Const,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulScalarVar(Var, Var),
    AddScalarVar(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Square(Var),
    Sum(Var),
    SumRows(Var),
    SliceRows(Var, usize),
    SelectRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    ReverseRows(Var),
    Gather(Var, Vec<(usize, usize)>),
    Im2Col { x: Var, kernel: usize, pad: usize },
    MaxPool { x: Var, argmax: Vec<usize> },
    NormalizeRows { x: Var, norms: Vec<f64> },
    Softmax(Var),
    Gru { x: Var, w: Var, u: Var, b: Var, cache: Box<GruCache> },
    ScalarLoss { x: Var, grad: Mat },
}

struct Node {
    op: Op,
    value: Option<Mat>,
}

/// A single forward pass recorded for differentiation.
pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
}

fn dims(m: &Mat) -> (usize, usize) {
    m.dim()
}

fn check_finite(op: &'static str, m: &Mat) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(NnError::NonFinite { op })
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(256),
            param_nodes: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => self.store.get(*id),
            (_, Some(m)) => m,
            (_, None) => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        dims(self.value(v))
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    fn push(&mut self, op: Op, value: Mat, name: &'static str) -> Result<Var> {
        check_finite(name, &value)?;
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes.get(&id) {
            return *v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn constant(&mut self, value: Mat) -> Result<Var> {
        self.push(Op::Const, value, "constant")
    }

    pub fn scalar_const(&mut self, x: f64) -> Result<Var> {
        self.constant(Array2::from_elem((1, 1), x))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(NnError::shape("matmul", dims(va), dims(vb)));
        }
        let out = va.dot(vb);
        self.push(Op::MatMul(a, b), out, "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).t().as_standard_layout().into_owned();
        self.push(Op::Transpose(a), out, "transpose")
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(NnError::shape(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), out, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a) - self.value(b);
        self.push(Op::Sub(a, b), out, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), out, "mul")
    }

    /// `a + row`, broadcasting a `1 x n` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != va.ncols() {
            return Err(NnError::shape("add_row", dims(va), dims(vr)));
        }
        let out = va + vr;
        self.push(Op::AddRow(a, row), out, "add_row")
    }

    /// `a * s` for a `1 x 1` node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let vs = self.value(s);
        if dims(vs) != (1, 1) {
            return Err(NnError::shape("mul_scalar", self.shape(a), dims(vs)));
        }
        let k = vs[[0, 0]];
        let out = self.value(a) * k;
        self.push(Op::MulScalarVar(a, s), out, "mul_scalar")
    }

    /// `a + s` for a `1 x 1` node `s`.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let vs = self.value(s);
        if dims(vs) != (1, 1) {
            return Err(NnError::shape("add_scalar", self.shape(a), dims(vs)));
        }
        let k = vs[[0, 0]];
        let out = self.value(a) + k;
        self.push(Op::AddScalarVar(a, s), out, "add_scalar")
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let out = self.value(a) * k;
        self.push(Op::Scale(a, k), out, "scale")
    }

    pub fn shift(&mut self, a: Var, k: f64) -> Result<Var> {
        let out = self.value(a) + k;
        self.push(Op::Shift(a), out, "shift")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).mapv(sigmoid);
        self.push(Op::Sigmoid(a), out, "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).mapv(f64::tanh);
        self.push(Op::Tanh(a), out, "tanh")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(Op::Relu(a), out, "relu")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).mapv(f64::exp);
        self.push(Op::Exp(a), out, "exp")
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).mapv(|x| x * x);
        self.push(Op::Square(a), out, "square")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(Op::Sum(a), out, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(NnError::invalid("mean", "empty input"));
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Column sums as a `1 x n` row.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(Op::SumRows(a), out, "sum_rows")
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let va = self.value(a);
        if start >= end || end > va.nrows() {
            return Err(NnError::invalid(
                "slice_rows",
                format!("range {start}..{end} for {} rows", va.nrows()),
            ));
        }
        let out = va.slice(s![start..end, ..]).to_owned();
        self.push(Op::SliceRows(a, start), out, "slice_rows")
    }

    /// Gathers rows by index; indices may repeat (embedding lookup).
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let va = self.value(a);
        if let Some(&bad) = rows.iter().find(|&&r| r >= va.nrows()) {
            return Err(NnError::invalid(
                "select_rows",
                format!("row {bad} out of {}", va.nrows()),
            ));
        }
        let out = va.select(Axis(0), rows);
        self.push(Op::SelectRows(a, rows.to_vec()), out, "select_rows")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = concatenate(Axis(1), &views).map_err(|_| {
            NnError::shape(
                "concat_cols",
                self.shape(parts[0]),
                self.shape(*parts.last().unwrap()),
            )
        })?;
        self.push(Op::ConcatCols(parts.to_vec()), out, "concat_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = concatenate(Axis(0), &views).map_err(|_| {
            NnError::shape(
                "concat_rows",
                self.shape(parts[0]),
                self.shape(*parts.last().unwrap()),
            )
        })?;
        self.push(Op::ConcatRows(parts.to_vec()), out, "concat_rows")
    }

    pub fn reverse_rows(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).slice(s![..;-1, ..]).to_owned();
        self.push(Op::ReverseRows(a), out, "reverse_rows")
    }

    /// Picks individual elements into a `1 x n` row.
    pub fn gather(&mut self, a: Var, at: &[(usize, usize)]) -> Result<Var> {
        let va = self.value(a);
        let (r, c) = dims(va);
        let mut out = Array2::zeros((1, at.len()));
        for (k, &(i, j)) in at.iter().enumerate() {
            if i >= r || j >= c {
                return Err(NnError::invalid(
                    "gather",
                    format!("index ({i},{j}) outside {r}x{c}"),
                ));
            }
            out[[0, k]] = va[[i, j]];
        }
        self.push(Op::Gather(a, at.to_vec()), out, "gather")
    }

    /// Unfolds `T x C` into `T_out x (kernel * C)` windows with `pad` zero rows
    /// on the left and `kernel - 1 - pad` on the right, so `T_out == T`.
    pub fn im2col(&mut self, x: Var, kernel: usize, pad: usize) -> Result<Var> {
        let vx = self.value(x);
        if kernel == 0 || pad >= kernel {
            return Err(NnError::invalid(
                "im2col",
                format!("kernel {kernel} with pad {pad}"),
            ));
        }
        let (t, c) = dims(vx);
        let mut out = Array2::zeros((t, kernel * c));
        for row in 0..t {
            for k in 0..kernel {
                let src = row as isize + k as isize - pad as isize;
                if src < 0 || src >= t as isize {
                    continue;
                }
                out.slice_mut(s![row, k * c..(k + 1) * c])
                    .assign(&vx.row(src as usize));
            }
        }
        self.push(Op::Im2Col { x, kernel, pad }, out, "im2col")
    }

    /// Max over windows of `kernel` rows taken every `stride` rows, per column.
    pub fn max_pool(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let vx = self.value(x);
        let (t, c) = dims(vx);
        if kernel == 0 || stride == 0 || t < kernel {
            return Err(NnError::invalid(
                "max_pool",
                format!("{t} rows for kernel {kernel} stride {stride}"),
            ));
        }
        let t_out = (t - kernel) / stride + 1;
        let mut out = Array2::zeros((t_out, c));
        let mut argmax = Vec::with_capacity(t_out * c);
        for i in 0..t_out {
            for j in 0..c {
                let mut best = i * stride;
                for r in i * stride..i * stride + kernel {
                    if vx[[r, j]] > vx[[best, j]] {
                        best = r;
                    }
                }
                out[[i, j]] = vx[[best, j]];
                argmax.push(best * c + j);
            }
        }
        self.push(Op::MaxPool { x, argmax }, out, "max_pool")
    }

    /// Scales every row to unit Euclidean length.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let norms: Vec<f64> = vx
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .collect();
        if norms.iter().any(|&n| n < 1e-12) {
            return Err(NnError::invalid("normalize_rows", "zero-length row"));
        }
        let mut out = vx.clone();
        for (mut row, n) in out.rows_mut().into_iter().zip(&norms) {
            row.mapv_inplace(|v| v / n);
        }
        self.push(Op::NormalizeRows { x, norms }, out, "normalize_rows")
    }

    /// Softmax over every element of `x`, keeping its shape.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let max = vx.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut out = vx.mapv(|v| (v - max).exp());
        let z = out.sum();
        out.mapv_inplace(|v| v / z);
        self.push(Op::Softmax(x), out, "softmax")
    }

    /// Fused gated recurrent layer over the rows of `x` (see [`crate::gru`]).
    pub fn gru(&mut self, x: Var, w: Var, u: Var, b: Var, reverse: bool) -> Result<Var> {
        let (vx, vw, vu, vb) = (self.value(x), self.value(w), self.value(u), self.value(b));
        let hidden = vu.nrows();
        if vw.nrows() != vx.ncols() || vw.ncols() != 3 * hidden {
            return Err(NnError::shape("gru", dims(vx), dims(vw)));
        }
        if vu.ncols() != 3 * hidden || dims(vb) != (1, 3 * hidden) {
            return Err(NnError::shape("gru", dims(vu), dims(vb)));
        }
        let (out, cache) = gru::forward(vx, vw, vu, vb, reverse);
        self.push(
            Op::Gru {
                x,
                w,
                u,
                b,
                cache: Box::new(cache),
            },
            out,
            "gru",
        )
    }

    /// Scalar node whose value and input gradient were computed externally.
    ///
    /// Used for fused losses (BCE, smooth-L1, CTC) whose gradient has a closed
    /// form that is cheaper than composing primitive ops.
    pub fn scalar_loss(&mut self, x: Var, value: f64, grad: Mat) -> Result<Var> {
        if dims(&grad) != self.shape(x) {
            return Err(NnError::shape("scalar_loss", self.shape(x), dims(&grad)));
        }
        check_finite("scalar_loss", &grad)?;
        self.push(
            Op::ScalarLoss { x, grad },
            Array2::from_elem((1, 1), value),
            "scalar_loss",
        )
    }

    /// Sum of binary cross-entropy terms between `logits` and `targets`,
    /// weighted elementwise. Zero weight excludes an element.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Mat, weights: &Mat) -> Result<Var> {
        let vl = self.value(logits);
        if dims(vl) != dims(targets) || dims(vl) != dims(weights) {
            return Err(NnError::shape("bce_with_logits", dims(vl), dims(targets)));
        }
        let mut total = 0.0;
        let mut grad = Array2::zeros(vl.raw_dim());
        for ((g, &x), (&y, &w)) in grad
            .iter_mut()
            .zip(vl.iter())
            .zip(targets.iter().zip(weights.iter()))
        {
            if w == 0.0 {
                continue;
            }
            // log(1 + e^x) - y x, stable for either sign of x.
            total += w * (x.max(0.0) - x * y + (-x.abs()).exp().ln_1p());
            *g = w * (sigmoid(x) - y);
        }
        self.scalar_loss(logits, total, grad)
    }

    /// Sum of smooth-L1 (beta = 1) distances, weighted elementwise.
    pub fn smooth_l1(&mut self, pred: Var, targets: &Mat, weights: &Mat) -> Result<Var> {
        let vp = self.value(pred);
        if dims(vp) != dims(targets) || dims(vp) != dims(weights) {
            return Err(NnError::shape("smooth_l1", dims(vp), dims(targets)));
        }
        let mut total = 0.0;
        let mut grad = Array2::zeros(vp.raw_dim());
        for ((g, &p), (&y, &w)) in grad
            .iter_mut()
            .zip(vp.iter())
            .zip(targets.iter().zip(weights.iter()))
        {
            if w == 0.0 {
                continue;
            }
            let d = p - y;
            if d.abs() < 1.0 {
                total += w * 0.5 * d * d;
                *g = w * d;
            } else {
                total += w * (d.abs() - 0.5);
                *g = w * d.signum();
            }
        }
        self.scalar_loss(pred, total, grad)
    }

    /// Reverse pass from a `1 x 1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(NnError::shape("backward", self.shape(loss), (1, 1)));
        }
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = Gradients {
            grads: vec![None; self.store.len()],
        };
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = node.value.as_ref();
            match &node.op {
                Op::Param(id) => accumulate(&mut out.grads[id.0], g),
                Op::Const => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().as_standard_layout().into_owned()),
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, r) => {
                    acc(&mut grads, *r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, g);
                }
                Op::MulScalarVar(a, s) => {
                    let k = self.value(*s)[[0, 0]];
                    let gs = (&g * self.value(*a)).sum();
                    acc(&mut grads, *s, Array2::from_elem((1, 1), gs));
                    acc(&mut grads, *a, g * k);
                }
                Op::AddScalarVar(a, s) => {
                    acc(&mut grads, *s, Array2::from_elem((1, 1), g.sum()));
                    acc(&mut grads, *a, g);
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g * *k),
                Op::Shift(a) => acc(&mut grads, *a, g),
                Op::Sigmoid(a) => {
                    let y = y.unwrap();
                    acc(&mut grads, *a, g * &y.mapv(|v| v * (1.0 - v)));
                }
                Op::Tanh(a) => {
                    let y = y.unwrap();
                    acc(&mut grads, *a, g * &y.mapv(|v| 1.0 - v * v));
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    acc(&mut grads, *a, g * &x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
                }
                Op::Exp(a) => acc(&mut grads, *a, g * y.unwrap()),
                Op::Square(a) => acc(&mut grads, *a, g * &(self.value(*a) * 2.0)),
                Op::Sum(a) => {
                    let k = g[[0, 0]];
                    acc(&mut grads, *a, Array2::from_elem(self.value(*a).raw_dim(), k));
                }
                Op::SumRows(a) => {
                    let rows = self.value(*a).nrows();
                    let full = g
                        .broadcast((rows, g.ncols()))
                        .expect("row broadcast")
                        .to_owned();
                    acc(&mut grads, *a, full);
                }
                Op::SliceRows(a, start) => {
                    let mut full = Array2::zeros(self.value(*a).raw_dim());
                    full.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, *a, full);
                }
                Op::SelectRows(a, rows) => {
                    let mut full = Array2::zeros(self.value(*a).raw_dim());
                    for (k, &r) in rows.iter().enumerate() {
                        let mut dst = full.row_mut(r);
                        dst += &g.row(k);
                    }
                    acc(&mut grads, *a, full);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        acc(&mut grads, p, g.slice(s![off..off + h, ..]).to_owned());
                        off += h;
                    }
                }
                Op::ReverseRows(a) => acc(&mut grads, *a, g.slice(s![..;-1, ..]).to_owned()),
                Op::Gather(a, at) => {
                    let mut full = Array2::zeros(self.value(*a).raw_dim());
                    for (k, &(i, j)) in at.iter().enumerate() {
                        full[[i, j]] += g[[0, k]];
                    }
                    acc(&mut grads, *a, full);
                }
                Op::Im2Col { x, kernel, pad } => {
                    let (t, c) = self.shape(*x);
                    let mut full = Array2::zeros((t, c));
                    for row in 0..t {
                        for k in 0..*kernel {
                            let src = row as isize + k as isize - *pad as isize;
                            if src < 0 || src >= t as isize {
                                continue;
                            }
                            let mut dst = full.row_mut(src as usize);
                            dst += &g.slice(s![row, k * c..(k + 1) * c]);
                        }
                    }
                    acc(&mut grads, *x, full);
                }
                Op::MaxPool { x, argmax } => {
                    let (t, c) = self.shape(*x);
                    let mut flat = vec![0.0; t * c];
                    for (&src, &gv) in argmax.iter().zip(g.iter()) {
                        flat[src] += gv;
                    }
                    acc(&mut grads, *x, Array2::from_shape_vec((t, c), flat).unwrap());
                }
                Op::NormalizeRows { x, norms } => {
                    let y = y.unwrap();
                    let mut gx = g.clone();
                    for ((mut gr, yr), n) in gx.rows_mut().into_iter().zip(y.rows()).zip(norms) {
                        let proj = gr.dot(&yr);
                        gr.zip_mut_with(&yr, |gv, &yv| *gv = (*gv - proj * yv) / n);
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Softmax(x) => {
                    let y = y.unwrap();
                    let dot = (&g * y).sum();
                    acc(&mut grads, *x, y * &g.mapv(|v| v - dot));
                }
                Op::Gru { x, w, u, b, cache } => {
                    let gg = gru::backward(
                        self.value(*x),
                        self.value(*w),
                        self.value(*u),
                        cache,
                        &g,
                    );
                    acc(&mut grads, *x, gg.dx);
                    acc(&mut grads, *w, gg.dw);
                    acc(&mut grads, *u, gg.du);
                    acc(&mut grads, *b, gg.db);
                }
                Op::ScalarLoss { x, grad } => {
                    let k = g[[0, 0]];
                    acc(&mut grads, *x, grad * k);
                }
            }
        }
        for g in out.grads.iter().flatten() {
            check_finite("backward", g)?;
        }
        Ok(out)
    }
}

fn accumulate(slot: &mut Option<Mat>, delta: Mat) {
    match slot {
        Some(g) => *g += &delta,
        None => *slot = Some(delta),
    }
}

fn acc(grads: &mut [Option<Mat>], v: Var, delta: Mat) {
    accumulate(&mut grads[v.0], delta);
}
