//! Central finite-difference gradient checking.
//!
//! [`check`] perturbs every scalar of every parameter by `±step`, re-runs the
//! forward pass, and compares the slope with the reverse-mode gradient.
//! [`op_suite`] lists randomized cases covering every differentiable op.

use ndarray::Array2;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::Result;
use crate::graph::{Graph, Mat, ParamStore, Var};
use crate::layers::{cosine_distance, BiGru, Conv1d, Linear};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, 1e-3)`; the floor keeps near-zero gradients from
/// turning rounding noise into large ratios.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Largest relative error over all parameter scalars.
pub fn check<F>(store: &ParamStore, f: F, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let grads = {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        g.backward(loss)?
    };
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(s);
        let loss = f(&mut g)?;
        Ok(g.scalar(loss))
    };
    let mut worst = 0.0f64;
    let mut probe = store.clone();
    for id in store.ids() {
        let zeros = Array2::zeros(store.get(id).raw_dim());
        let analytic = grads
            .get(id)
            .unwrap_or(&zeros)
            .as_standard_layout()
            .into_owned();
        for idx in 0..store.get(id).len() {
            let orig = flat(store.get(id))[idx];
            flat_mut(probe.get_mut(id))[idx] = orig + step;
            let up = eval(&probe)?;
            flat_mut(probe.get_mut(id))[idx] = orig - step;
            let down = eval(&probe)?;
            flat_mut(probe.get_mut(id))[idx] = orig;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(flat(&analytic)[idx], numeric));
        }
    }
    Ok(worst)
}

fn flat(m: &Mat) -> &[f64] {
    m.as_slice().expect("standard layout")
}

fn flat_mut(m: &mut Mat) -> &mut [f64] {
    m.as_slice_mut().expect("standard layout")
}

pub fn random_mat<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Random values bounded away from zero, for ops with a kink at zero.
fn away_from_zero<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    Array2::from_shape_fn((rows, cols), |_| {
        let v: f64 = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// `sum(y * R)` for a fixed random `R`, turning any output into a scalar
/// whose gradient exercises the full Jacobian.
pub fn project(g: &mut Graph, y: Var, weights: &Mat) -> Result<Var> {
    let w = g.constant(weights.clone())?;
    let p = g.mul(y, w)?;
    g.sum(p)
}

/// A randomized case: builds parameters and a loss closure from a seed and
/// returns the worst relative error.
pub type Case = fn(&mut StdRng) -> Result<f64>;

macro_rules! unary_case {
    ($name:ident, $rows:expr, $cols:expr, $gen:ident, $op:ident) => {
        fn $name(rng: &mut StdRng) -> Result<f64> {
            let mut store = ParamStore::new();
            let a = store.add("a", $gen(rng, $rows, $cols));
            let w = random_mat(rng, $rows, $cols);
            check(
                &store,
                |g| {
                    let x = g.param(a);
                    let y = g.$op(x)?;
                    project(g, y, &w)
                },
                STEP,
            )
        }
    };
}

macro_rules! binary_case {
    ($name:ident, $op:ident) => {
        fn $name(rng: &mut StdRng) -> Result<f64> {
            let mut store = ParamStore::new();
            let a = store.add("a", random_mat(rng, 3, 4));
            let b = store.add("b", random_mat(rng, 3, 4));
            let w = random_mat(rng, 3, 4);
            check(
                &store,
                |g| {
                    let (x, y) = (g.param(a), g.param(b));
                    let z = g.$op(x, y)?;
                    project(g, z, &w)
                },
                STEP,
            )
        }
    };
}

unary_case!(case_transpose, 3, 2, random_mat, transpose_proj);
unary_case!(case_sigmoid, 3, 4, random_mat, sigmoid);
unary_case!(case_tanh, 3, 4, random_mat, tanh);
unary_case!(case_relu, 3, 4, away_from_zero, relu);
unary_case!(case_exp, 3, 4, random_mat, exp);
unary_case!(case_square, 3, 4, random_mat, square);
unary_case!(case_sum_rows, 4, 3, random_mat, sum_rows_proj);
unary_case!(case_reverse_rows, 5, 2, random_mat, reverse_rows);
unary_case!(case_normalize_rows, 3, 5, away_from_zero, normalize_rows);
unary_case!(case_softmax, 6, 1, random_mat, softmax);
binary_case!(case_add, add);
binary_case!(case_sub, sub);
binary_case!(case_mul, mul);

// Ops whose output shape differs from the input get a projection sized to
// the output; these small adapters keep the macro usable.
impl<'p> Graph<'p> {
    fn transpose_proj(&mut self, x: Var) -> Result<Var> {
        let t = self.transpose(x)?;
        self.transpose(t)
    }

    fn sum_rows_proj(&mut self, x: Var) -> Result<Var> {
        let s = self.sum_rows(x)?;
        let rows = self.shape(x).0;
        let parts = vec![s; rows];
        self.concat_rows(&parts)
    }
}

fn case_matmul(rng: &mut StdRng) -> Result<f64> {
    let mut store = ParamStore::new();
    let a = store.add("a", random_mat(rng, 3, 4));
    let b = store.add("b", random_mat(rng, 4, 2));
    let w = random_mat(rng, 3, 2);
    check(
        &store,
        |g| {
            let (x, y) = (g.param(a), g.param(b));
            let z = g.matmul(x, y)?;
            project(g, z, &w)
        },
        STEP,
    )
}

fn case_add_row(rng: &mut StdRng) -> Result<f64> {
    let mut store = ParamStore::new();
    let a = store.add("a", random_mat(rng, 4, 3));
    let r = store.add("r", random_mat(rng, 1, 3));
    let w = random_mat(rng, 4, 3);
    check(
        &store,
        |g| {
            let (x, y) = (g.param(a), g.param(r));
            let z = g.add_row(x, y)?;
            project(g, z, &w)
        },
        STEP,
    )
}

fn case_scalar_var_ops(rng: &mut StdRng) -> Result<f64> {
    let mut store = ParamStore::new();
    let a = store.add("a", random_mat(rng, 3, 2));
    let s = store.add("s", random_mat(rng, 1, 1));
    let k = store.add("k", random_mat(rng, 1, 1));
    let w = random_mat(rng, 3, 2);
    check(
        &store,
        |g| {
            let (x, sv, kv) = (g.param(a), g.param(s), g.param(k));
            let y = g.mul_scalar(x, sv)?;
            let y = g.add_scalar(y, kv)?;
            let y = g.scale(y, -1.7)?;
            let y = g.shift(y, 0.3)?;
            project(g, y, &w)
        },
        STEP,
    )
}

fn case_reductions(rng: &mut StdRng) -> Result<f64> {
    let mut store = ParamStore::new();
    let a = store.add("a", random_mat(rng, 3, 4));
    let w = random_mat(rng, 3, 4);
    check(
        &store,
        |g| {
            let x = g.param(a);
            let y = g.mul(x, x)?;
            let m = g.mean(y)?;
            let p = project(g, x, &w)?;
            let s = g.sum(p)?;
            g.add(m, s)
        },
        STEP,
    )
}

fn case_rows(rng: &mut StdRng) -> Result<f64> {
    let mut store = ParamStore::new();
    let a = store.add("a", random_mat(rng, 5, 3));
    let b = store.add("b", random_mat(rng, 2, 3));
    let w = random_mat(rng, 8, 3);
    check(
        &store,
        |g| {
            let (x, y) = (g.param(a), g.param(b));
            let sl = g.slice_rows(x, 1, 4)?;
            let sel = g.select_rows(x, &[4, 0, 4])?;
            let cat = g.concat_rows(&[sl, sel, y])?;
            project(g, cat, &w)
        },
        STEP,
    )
}

fn case_concat_cols_gather(rng: &mut StdRng) -> Result<f64> {
    let mut store = ParamStore::new();
    let a = store.add("a", random_mat(rng, 3, 2));
    let b = store.add("b", random_mat(rng, 3, 3));
    let w = random_mat(rng, 1, 4);
    check(
        &store,
        |g| {
            let (x, y) = (g.param(a), g.param(b));
            let cat = g.concat_cols(&[x, y])?;
            let picked = g.gather(cat, &[(0, 0), (2, 4), (1, 2), (2, 4)])?;
            project(g, picked, &w)
        },
        STEP,
    )
}

fn case_im2col(rng: &mut StdRng) -> Result<f64> {
    let mut store = ParamStore::new();
    let a = store.add("a", random_mat(rng, 9, 2));
    let kernel = rng.random_range(1..=8usize);
    let pad = (kernel - 1) / 2;
    let w = random_mat(rng, 9, 2 * kernel);
    check(
        &store,
        |g| {
            let x = g.param(a);
            let y = g.im2col(x, kernel, pad)?;
            project(g, y, &w)
        },
        STEP,
    )
}

fn case_max_pool(rng: &mut StdRng) -> Result<f64> {
    let mut store = ParamStore::new();
    // Distinct values spaced well beyond the step so the argmax is stable.
    let mut vals: Vec<f64> = (0..36).map(|i| i as f64 * 0.05).collect();
    for i in (1..vals.len()).rev() {
        let j = rng.random_range(0..=i);
        vals.swap(i, j);
    }
    let a = store.add("a", Array2::from_shape_vec((12, 3), vals).unwrap());
    let w = random_mat(rng, 5, 3);
    check(
        &store,
        |g| {
            let x = g.param(a);
            let y = g.max_pool(x, 4, 2)?;
            project(g, y, &w)
        },
        STEP,
    )
}

fn case_gru(rng: &mut StdRng) -> Result<f64> {
    let mut store = ParamStore::new();
    let x = store.add("x", random_mat(rng, 6, 3));
    let w = store.add("w", random_mat(rng, 3, 12));
    let u = store.add("u", random_mat(rng, 4, 12));
    let b = store.add("b", random_mat(rng, 1, 12));
    let reverse = rng.random_bool(0.5);
    let proj = random_mat(rng, 6, 4);
    check(
        &store,
        |g| {
            let (xv, wv, uv, bv) = (g.param(x), g.param(w), g.param(u), g.param(b));
            let h = g.gru(xv, wv, uv, bv, reverse)?;
            project(g, h, &proj)
        },
        STEP,
    )
}

fn case_bce(rng: &mut StdRng) -> Result<f64> {
    let mut store = ParamStore::new();
    let a = store.add("a", random_mat(rng, 2, 5) * 3.0);
    let targets = Array2::from_shape_fn((2, 5), |_| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
    let weights = Array2::from_shape_fn((2, 5), |_| rng.random_range(0.0..1.0));
    check(
        &store,
        |g| {
            let x = g.param(a);
            g.bce_with_logits(x, &targets, &weights)
        },
        STEP,
    )
}

fn case_smooth_l1(rng: &mut StdRng) -> Result<f64> {
    let mut store = ParamStore::new();
    let a = store.add("a", random_mat(rng, 2, 5) * 3.0);
    let mut targets = random_mat(rng, 2, 5);
    // Keep every residual away from the |d| = 1 seam and from 0.
    for (t, p) in targets.iter_mut().zip(store.get(a).iter()) {
        let d = p - *t;
        if (d.abs() - 1.0).abs() < 0.05 || d.abs() < 0.05 {
            *t -= 0.2;
        }
    }
    let weights = Array2::from_shape_fn((2, 5), |_| rng.random_range(0.0..1.0));
    check(
        &store,
        |g| {
            let x = g.param(a);
            g.smooth_l1(x, &targets, &weights)
        },
        STEP,
    )
}

fn case_cosine_distance(rng: &mut StdRng) -> Result<f64> {
    let mut store = ParamStore::new();
    let a = store.add("a", random_mat(rng, 1, 8));
    let b = store.add("b", random_mat(rng, 1, 8));
    check(
        &store,
        |g| {
            let (x, y) = (g.param(a), g.param(b));
            cosine_distance(g, x, y)
        },
        STEP,
    )
}

fn case_linear_conv(rng: &mut StdRng) -> Result<f64> {
    let mut store = ParamStore::new();
    let x = store.add("x", random_mat(rng, 7, 3));
    let conv = Conv1d::new(&mut store, "conv", 3, 4, 3, rng);
    let lin = Linear::new(&mut store, "lin", 4, 2, rng);
    let w = random_mat(rng, 7, 2);
    check(
        &store,
        |g| {
            let xv = g.param(x);
            let h = conv.forward(g, xv)?;
            let h = g.tanh(h)?;
            let y = lin.forward(g, h)?;
            project(g, y, &w)
        },
        STEP,
    )
}

fn case_bigru_encoder(rng: &mut StdRng) -> Result<f64> {
    let mut store = ParamStore::new();
    let x = store.add("x", random_mat(rng, 5, 3));
    let enc = BiGru::new(&mut store, "enc", 3, 3, 2, rng);
    let lin = Linear::new(&mut store, "proj", 6, 4, rng);
    let w = random_mat(rng, 1, 4);
    check(
        &store,
        |g| {
            let xv = g.param(x);
            let out = enc.forward(g, xv)?;
            let e = lin.forward(g, out.last)?;
            let e = g.normalize_rows(e)?;
            project(g, e, &w)
        },
        STEP,
    )
}

pub fn op_suite() -> Vec<(&'static str, Case)> {
    vec![
        ("matmul", case_matmul as Case),
        ("transpose", case_transpose),
        ("add", case_add),
        ("sub", case_sub),
        ("mul", case_mul),
        ("add_row", case_add_row),
        ("scalar_ops", case_scalar_var_ops),
        ("sigmoid", case_sigmoid),
        ("tanh", case_tanh),
        ("relu", case_relu),
        ("exp", case_exp),
        ("square", case_square),
        ("sum_mean", case_reductions),
        ("sum_rows", case_sum_rows),
        ("slice_select_concat_rows", case_rows),
        ("concat_cols_gather", case_concat_cols_gather),
        ("reverse_rows", case_reverse_rows),
        ("im2col", case_im2col),
        ("max_pool", case_max_pool),
        ("normalize_rows", case_normalize_rows),
        ("softmax", case_softmax),
        ("gru", case_gru),
        ("bce_with_logits", case_bce),
        ("smooth_l1", case_smooth_l1),
        ("cosine_distance", case_cosine_distance),
        ("linear_conv1d", case_linear_conv),
        ("bigru_encoder_2layer", case_bigru_encoder),
    ]
}

#[derive(Clone, Debug)]
pub struct CaseReport {
    pub name: String,
    pub instances: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Runs `case` on `instances` independent seeds derived from `seed`.
pub fn run_case(name: &str, case: Case, instances: usize, seed: u64) -> Result<CaseReport> {
    let mut worst = 0.0f64;
    for i in 0..instances {
        let mut rng = StdRng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
        worst = worst.max(case(&mut rng)?);
    }
    Ok(CaseReport {
        name: name.to_string(),
        instances,
        max_rel_err: worst,
        passed: worst < TOLERANCE,
    })
}

pub fn run_suite(instances: usize, seed: u64) -> Result<Vec<CaseReport>> {
    op_suite()
        .into_iter()
        .map(|(name, case)| run_case(name, case, instances, seed))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes_twenty_instances() {
        for report in run_suite(20, 7).unwrap() {
            assert!(
                report.passed,
                "{} failed: rel err {:e}",
                report.name, report.max_rel_err
            );
        }
    }

    #[test]
    fn cosine_distance_tighter_tolerance() {
        let r = run_case("cos", case_cosine_distance, 20, 11).unwrap();
        assert!(r.max_rel_err < 1e-5, "{:e}", r.max_rel_err);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut store = ParamStore::new();
        let a = store.add("a", Array2::from_elem((1, 1), 0.5));
        // scalar_loss with a deliberately wrong gradient
        let err = check(
            &store,
            |g| {
                let x = g.param(a);
                let v = g.value(x)[[0, 0]];
                g.scalar_loss(x, v * v, Array2::from_elem((1, 1), 3.0 * v))
            },
            STEP,
        )
        .unwrap();
        assert!(err > 0.1);
    }
}
