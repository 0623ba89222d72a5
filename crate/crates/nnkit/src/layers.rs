//! Parameterized building blocks. Each layer registers its matrices in a
//! [`ParamStore`] at construction and emits graph nodes in `forward`.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{NnError, Result};
use crate::graph::{Graph, Mat, ParamId, ParamStore, Var};

fn uniform<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Mat {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

fn xavier<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Mat {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, fan_in, fan_out, bound)
}

/// `y = x W + b`
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier(rng, in_dim, out_dim));
        let bias = store.add(format!("{name}.bias"), Array2::zeros((1, out_dim)));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

/// Length-preserving 1-D convolution over rows (zero "same" padding).
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub linear: Linear,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            linear: Linear::new(store, name, kernel * in_dim, out_dim, rng),
            kernel,
        }
    }

    /// Left padding; the right side gets `kernel - 1 - pad`.
    pub fn pad(&self) -> usize {
        (self.kernel - 1) / 2
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let cols = g.im2col(x, self.kernel, self.pad())?;
        self.linear.forward(g, cols)
    }
}

#[derive(Clone, Debug)]
pub struct GruLayer {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl GruLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w = store.add(format!("{name}.w"), uniform(rng, in_dim, 3 * hidden, bound));
        let u = store.add(format!("{name}.u"), uniform(rng, hidden, 3 * hidden, bound));
        let b = store.add(format!("{name}.b"), Array2::zeros((1, 3 * hidden)));
        Self { w, u, b, hidden }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, reverse: bool) -> Result<Var> {
        let (w, u, b) = (g.param(self.w), g.param(self.u), g.param(self.b));
        g.gru(x, w, u, b, reverse)
    }
}

/// Stacked bidirectional recurrent encoder.
#[derive(Clone, Debug)]
pub struct BiGru {
    layers: Vec<(GruLayer, GruLayer)>,
    pub hidden: usize,
}

pub struct BiGruOutput {
    /// `T x 2H`: forward states then backward states per row.
    pub seq: Var,
    /// `1 x 2H`: last forward state and first backward state of the top layer.
    pub last: Var,
}

impl BiGru {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        n_layers: usize,
        rng: &mut R,
    ) -> Self {
        assert!(n_layers >= 1, "BiGru needs at least one layer");
        let layers = (0..n_layers)
            .map(|l| {
                let d = if l == 0 { in_dim } else { 2 * hidden };
                (
                    GruLayer::new(store, &format!("{name}.l{l}.fwd"), d, hidden, rng),
                    GruLayer::new(store, &format!("{name}.l{l}.bwd"), d, hidden, rng),
                )
            })
            .collect();
        Self { layers, hidden }
    }

    pub fn out_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<BiGruOutput> {
        let steps = g.shape(x).0;
        if steps == 0 {
            return Err(NnError::Invalid {
                op: "bigru",
                msg: "empty sequence".into(),
            });
        }
        let mut input = x;
        let mut last = None;
        for (fwd, bwd) in &self.layers {
            let f = fwd.forward(g, input, false)?;
            let b = bwd.forward(g, input, true)?;
            input = g.concat_cols(&[f, b])?;
            last = Some((f, b));
        }
        let (f, b) = last.expect("at least one layer");
        let f_last = g.slice_rows(f, steps - 1, steps)?;
        let b_first = g.slice_rows(b, 0, 1)?;
        let last = g.concat_cols(&[f_last, b_first])?;
        Ok(BiGruOutput { seq: input, last })
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        vocab: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let table = store.add(format!("{name}.table"), uniform(rng, vocab, dim, 1.0));
        Self { table, dim }
    }

    pub fn forward(&self, g: &mut Graph, ids: &[usize]) -> Result<Var> {
        let t = g.param(self.table);
        g.select_rows(t, ids)
    }
}

/// `1 - a.b / (|a| |b|)` for `1 x n` rows, as a `1 x 1` node.
pub fn cosine_distance(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let na = g.normalize_rows(a)?;
    let nb = g.normalize_rows(b)?;
    let bt = g.transpose(nb)?;
    let cos = g.matmul(na, bt)?;
    let neg = g.scale(cos, -1.0)?;
    g.shift(neg, 1.0)
}

/// Plain-value cosine distance; errors on a zero vector.
pub fn cosine_distance_values(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(NnError::Shape {
            op: "cosine_distance",
            left: (1, a.len()),
            right: (1, b.len()),
        });
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(NnError::Invalid {
            op: "cosine_distance",
            msg: "zero vector".into(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(1.0 - dot / (na * nb))
}
