//! Fused gated recurrent layer.
//!
//! For input rows `x_t`, weights `W (I x 3H)`, `U (H x 3H)` and bias `b (1 x 3H)`
//! laid out as `[reset | update | candidate]`:
//!
//! ```text
//! r_t = sigmoid(x_t W_r + h_{t-1} U_r + b_r)
//! z_t = sigmoid(x_t W_z + h_{t-1} U_z + b_z)
//! n_t = tanh(x_t W_n + b_n + r_t * (h_{t-1} U_n))
//! h_t = (1 - z_t) * n_t + z_t * h_{t-1}
//! ```
//!
//! with `h_0 = 0`. In reverse mode the rows are visited from last to first
//! and output row `t` still holds the state after consuming `x_t`.

use ndarray::{Array2, ArrayView1, Axis};

use crate::graph::Mat;

pub struct GruCache {
    reverse: bool,
    r: Mat,
    z: Mat,
    n: Mat,
    hu_n: Mat,
    h_prev: Mat,
}

pub struct GruGrads {
    pub dx: Mat,
    pub dw: Mat,
    pub du: Mat,
    pub db: Mat,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out[j] = sum_k h[k] * u[k, j]`
fn row_times(h: ArrayView1<f64>, u: &Mat, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (k, &hk) in h.iter().enumerate() {
        if hk == 0.0 {
            continue;
        }
        for (o, &w) in out.iter_mut().zip(u.row(k).iter()) {
            *o += hk * w;
        }
    }
}

fn order(len: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
    if reverse {
        Box::new((0..len).rev())
    } else {
        Box::new(0..len)
    }
}

pub fn forward(x: &Mat, w: &Mat, u: &Mat, b: &Mat, reverse: bool) -> (Mat, GruCache) {
    let steps = x.nrows();
    let hidden = u.nrows();
    let xp = x.dot(w) + b;
    let mut out = Array2::zeros((steps, hidden));
    let mut cache = GruCache {
        reverse,
        r: Array2::zeros((steps, hidden)),
        z: Array2::zeros((steps, hidden)),
        n: Array2::zeros((steps, hidden)),
        hu_n: Array2::zeros((steps, hidden)),
        h_prev: Array2::zeros((steps, hidden)),
    };
    let mut h = vec![0.0; hidden];
    let mut hu = vec![0.0; 3 * hidden];
    for t in order(steps, reverse) {
        row_times(ArrayView1::from(&h[..]), u, &mut hu);
        let xr = xp.row(t);
        for j in 0..hidden {
            let r = sigmoid(xr[j] + hu[j]);
            let z = sigmoid(xr[hidden + j] + hu[hidden + j]);
            let hn = hu[2 * hidden + j];
            let n = (xr[2 * hidden + j] + r * hn).tanh();
            cache.r[[t, j]] = r;
            cache.z[[t, j]] = z;
            cache.n[[t, j]] = n;
            cache.hu_n[[t, j]] = hn;
            cache.h_prev[[t, j]] = h[j];
            h[j] = (1.0 - z) * n + z * h[j];
            out[[t, j]] = h[j];
        }
    }
    (out, cache)
}

pub fn backward(x: &Mat, w: &Mat, u: &Mat, cache: &GruCache, dout: &Mat) -> GruGrads {
    let steps = x.nrows();
    let hidden = u.nrows();
    let mut dxp = Array2::zeros((steps, 3 * hidden));
    let mut du = Array2::zeros(u.raw_dim());
    let mut carry = vec![0.0; hidden];
    let mut dhu = vec![0.0; 3 * hidden];
    for t in order(steps, !cache.reverse) {
        let mut dh_prev = vec![0.0; hidden];
        for j in 0..hidden {
            let dh = dout[[t, j]] + carry[j];
            let (r, z, n) = (cache.r[[t, j]], cache.z[[t, j]], cache.n[[t, j]]);
            let hp = cache.h_prev[[t, j]];
            let dz = dh * (hp - n);
            let dn = dh * (1.0 - z);
            dh_prev[j] = dh * z;
            let dn_pre = dn * (1.0 - n * n);
            let dr = dn_pre * cache.hu_n[[t, j]];
            let dr_pre = dr * r * (1.0 - r);
            let dz_pre = dz * z * (1.0 - z);
            dxp[[t, j]] = dr_pre;
            dxp[[t, hidden + j]] = dz_pre;
            dxp[[t, 2 * hidden + j]] = dn_pre;
            dhu[j] = dr_pre;
            dhu[hidden + j] = dz_pre;
            dhu[2 * hidden + j] = dn_pre * r;
        }
        // du += h_prev^T dhu ; dh_prev += dhu U^T
        for k in 0..hidden {
            let hk = cache.h_prev[[t, k]];
            let urow = u.row(k);
            let mut acc = 0.0;
            for (m, (&d, &uv)) in dhu.iter().zip(urow.iter()).enumerate() {
                if hk != 0.0 {
                    du[[k, m]] += hk * d;
                }
                acc += d * uv;
            }
            dh_prev[k] += acc;
        }
        carry = dh_prev;
    }
    let dw = x.t().dot(&dxp);
    let dx = dxp.dot(&w.t());
    let db = dxp.sum_axis(Axis(0)).insert_axis(Axis(0));
    GruGrads { dx, dw, du, db }
}
