use ndarray::{Array2, Zip};

use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one ordered parameter list.
///
/// Uses the folded bias correction
/// `θ ← θ − lr·√(1−β₂ᵗ)/(1−β₁ᵗ) · m / (√v + ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    step_count: u64,
    first_moment: Vec<Array2<f64>>,
    second_moment: Vec<Array2<f64>>,
    config: AdamConfig,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Array2<f64>>, config: AdamConfig) -> Self {
        let first_moment: Vec<_> = params
            .into_iter()
            .map(|p| Array2::zeros(p.dim()))
            .collect();
        let second_moment = first_moment.clone();
        Self {
            step_count: 0,
            first_moment,
            second_moment,
            config,
        }
    }

    pub fn from_parts(
        step_count: u64,
        first_moment: Vec<Array2<f64>>,
        second_moment: Vec<Array2<f64>>,
        config: AdamConfig,
    ) -> Result<Self> {
        if first_moment.len() != second_moment.len() {
            return Err(shape_err("adam moments", first_moment.len(), second_moment.len()));
        }
        for (m, v) in first_moment.iter().zip(&second_moment) {
            if m.dim() != v.dim() {
                return Err(shape_err("adam moments", format!("{:?}", m.dim()), format!("{:?}", v.dim())));
            }
        }
        Ok(Self {
            step_count,
            first_moment,
            second_moment,
            config,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn first_moment(&self) -> &[Array2<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Array2<f64>] {
        &self.second_moment
    }

    /// One update. Every gradient is checked for NaN/∞ before anything is
    /// mutated; a bad gradient rejects the whole step.
    pub fn step(
        &mut self,
        params: &mut [&mut Array2<f64>],
        grads: &[Array2<f64>],
        names: &[String],
        lr: f64,
    ) -> Result<()> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate must be >= 0, got {lr}")));
        }
        let n = self.first_moment.len();
        if params.len() != n || grads.len() != n {
            return Err(shape_err("adam parameter count", n, params.len().min(grads.len())));
        }
        for i in 0..n {
            let shape = self.first_moment[i].dim();
            if params[i].dim() != shape || grads[i].dim() != shape {
                return Err(shape_err(
                    "adam parameter",
                    format!("{shape:?}"),
                    format!("{:?}/{:?}", params[i].dim(), grads[i].dim()),
                ));
            }
            if grads[i].iter().any(|g| !g.is_finite()) {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
                return Err(Error::NonFiniteGradient(name));
            }
        }

        self.step_count += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step_count as i32;
        let step_size = lr * (1.0 - beta2.powi(t)).sqrt() / (1.0 - beta1.powi(t));
        for i in 0..n {
            Zip::from(&mut *params[i])
                .and(&mut self.first_moment[i])
                .and(&mut self.second_moment[i])
                .and(&grads[i])
                .for_each(|p, m, v, &g| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= step_size * *m / (v.sqrt() + eps);
                });
        }
        Ok(())
    }
}
