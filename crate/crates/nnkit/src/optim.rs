use ndarray::Array2;

use crate::graph::{Gradients, Mat, ParamStore};

pub trait Optimizer {
    fn step(&mut self, store: &mut ParamStore, grads: &Gradients);
    fn learning_rate(&self) -> f64;
    fn set_learning_rate(&mut self, lr: f64);
}

#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        for (id, g) in grads.iter() {
            let p = store.get_mut(id);
            p.scaled_add(-self.lr, g);
        }
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    moments: Vec<Option<(Mat, Mat)>>,
    steps: Vec<u32>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            moments: Vec::new(),
            steps: Vec::new(),
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
            self.steps.resize(store.len(), 0);
        }
        for (id, g) in grads.iter() {
            let p = store.get_mut(id);
            let (m, v) = self.moments[id.0].get_or_insert_with(|| {
                (Array2::zeros(p.raw_dim()), Array2::zeros(p.raw_dim()))
            });
            self.steps[id.0] += 1;
            let t = self.steps[id.0] as i32;
            let (b1, b2) = (self.beta1, self.beta2);
            let c1 = 1.0 - b1.powi(t);
            let c2 = 1.0 - b2.powi(t);
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    *p -= self.lr * mh / (vh.sqrt() + self.eps);
                });
        }
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Halves (by `factor`) the learning rate when a maximized metric has not
/// improved for `patience` consecutive observations.
#[derive(Clone, Debug)]
pub struct PlateauSchedule {
    pub patience: usize,
    pub factor: f64,
    best: f64,
    stale: usize,
}

impl PlateauSchedule {
    pub fn new(patience: usize, factor: f64) -> Self {
        Self {
            patience,
            factor,
            best: f64::NEG_INFINITY,
            stale: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Records a metric value; returns true when the learning rate was reduced.
    pub fn observe(&mut self, metric: f64, opt: &mut dyn Optimizer) -> bool {
        if metric > self.best {
            self.best = metric;
            self.stale = 0;
            return false;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            opt.set_learning_rate(opt.learning_rate() * self.factor);
            self.stale = 0;
            return true;
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use ndarray::array;

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut store = ParamStore::new();
        let x = store.add("x", array![[1.5, -2.0]]);
        let before = store.clone();
        let grads = {
            let mut g = Graph::new(&store);
            let xv = g.param(x);
            let z = g.scale(xv, 0.0).unwrap();
            let s = g.sum(z).unwrap();
            g.backward(s).unwrap()
        };
        let mut adam = Adam::new(0.1);
        for _ in 0..5 {
            adam.step(&mut store, &grads);
        }
        assert_eq!(store, before);
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut store = ParamStore::new();
        let x = store.add("x", array![[3.0]]);
        let mut adam = Adam::new(0.1);
        for _ in 0..300 {
            let grads = {
                let mut g = Graph::new(&store);
                let xv = g.param(x);
                let y = g.square(xv).unwrap();
                g.backward(y).unwrap()
            };
            adam.step(&mut store, &grads);
        }
        assert!(store.get(x)[[0, 0]].abs() < 0.05);
    }

    #[test]
    fn plateau_halves_after_patience() {
        let mut sched = PlateauSchedule::new(3, 0.5);
        let mut opt = Sgd { lr: 1.0 };
        assert!(!sched.observe(0.5, &mut opt));
        assert!(!sched.observe(0.4, &mut opt));
        assert!(!sched.observe(0.5, &mut opt));
        assert!(sched.observe(0.3, &mut opt));
        assert_eq!(opt.lr, 0.5);
        assert!(!sched.observe(0.6, &mut opt));
        assert_eq!(sched.best(), 0.6);
    }
}
