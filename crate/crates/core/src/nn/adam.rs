use super::params::{Gradients, ParamStore};
use crate::error::{Error, Result};

/// Adam moments and hyperparameters for one [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore, learning_rate: f64, beta1: f64, beta2: f64) -> Result<Self> {
        if !(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0) {
            return Err(Error::Config(format!(
                "Adam betas must lie in (0, 1), got ({beta1}, {beta2})"
            )));
        }
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        Ok(Self {
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
            learning_rate,
            beta1,
            beta2,
            epsilon: 1e-8,
        })
    }

    /// Defaults: lr 0.001, betas (0.9, 0.999), eps 1e-8.
    pub fn with_defaults(store: &ParamStore) -> Self {
        Self::new(store, 1e-3, 0.9, 0.999).expect("default hyperparameters are valid")
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }

    /// One bias-corrected Adam update. Leaves everything untouched on error.
    pub fn update(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.len() != store.len() || grads.len() != self.first_moment.len() {
            return Err(Error::dim("gradients, parameters and moments are not congruent"));
        }
        for ((_, p), g) in store.iter().zip(grads.raw()) {
            if g.len() != p.len() {
                return Err(Error::dim(format!("gradient for `{}` has wrong length", p.name)));
            }
            if let Some(k) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    name: p.name.clone(),
                    detail: format!("gradient entry {k} is {}", g[k]),
                });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let g = &grads.raw()[i];
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for k in 0..p.data.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p.data[k] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
