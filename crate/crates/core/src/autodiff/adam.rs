use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = |store: &ParamStore| {
            store
                .ids()
                .map(|id| {
                    let (r, c) = store.get(id).shape();
                    Tensor::zeros(r, c)
                })
                .collect::<Vec<_>>()
        };
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(store),
            v: zeros(store),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads` must hold one tensor per parameter, in
    /// store order.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::Shape {
                op: "adam",
                detail: format!("{} gradients for {} parameters", grads.len(), store.len()),
            });
        }
        if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
            log::warn!("non-finite gradient for {}", store.name(super::ParamId(bad)));
            return Err(Error::NonFinite("adam gradient"));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let g = &grads[i];
            let p = store.get_mut(id);
            if g.shape() != p.shape() {
                return Err(Error::Shape {
                    op: "adam",
                    detail: format!("gradient {:?} for parameter {:?}", g.shape(), p.shape()),
                });
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (k, w) in p.data_mut().iter_mut().enumerate() {
                let gk = g.data()[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                *w -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::from_vec(1, 2, vec![0.3, -0.7]).unwrap());
        let before = store.clone();
        let mut opt = Adam::new(&store, 0.1);
        opt.step(&mut store, &[Tensor::zeros(1, 2)]).unwrap();
        assert_eq!(store, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(1.0));
        let mut opt = Adam::new(&store, 0.01);
        opt.step(&mut store, &[Tensor::scalar(4.0)]).unwrap();
        assert!((store.get(id).get(0, 0) - 0.99).abs() < 1e-8);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(5.0));
        let mut opt = Adam::new(&store, 0.1);
        for _ in 0..500 {
            let w = store.get(id).get(0, 0);
            opt.step(&mut store, &[Tensor::scalar(2.0 * (w - 1.0))]).unwrap();
        }
        assert!((store.get(id).get(0, 0) - 1.0).abs() < 1e-2);
    }

    #[test]
    fn rejects_wrong_count() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::scalar(1.0));
        let mut opt = Adam::new(&store, 0.1);
        assert!(opt.step(&mut store, &[]).is_err());
    }
}
