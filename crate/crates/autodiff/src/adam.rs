//! Bias-corrected Adam.

use crate::{AutodiffError, ParamStore, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    /// Applies update number `t` (1-based) in place.
    ///
    /// `grads` follows the flat ordering of `params`. Nothing is modified
    /// when any gradient component is non-finite.
    pub fn step(&self, params: &mut ParamStore, grads: &[Tensor], t: u64) -> Result<()> {
        assert!(t >= 1, "Adam step counter starts at 1");
        assert_eq!(grads.len(), params.len(), "gradient list does not match parameters");
        for (name, g) in params.names().iter().zip(grads) {
            if !g.all_finite() {
                return Err(AutodiffError::NonFiniteGradient {
                    name: name.clone(),
                    step: t,
                });
            }
        }
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        let ParamStore {
            values,
            first_moment,
            second_moment,
            ..
        } = params;
        for (((p, m), v), g) in values
            .iter_mut()
            .zip(first_moment.iter_mut())
            .zip(second_moment.iter_mut())
            .zip(grads)
        {
            for (((p, m), v), &g) in p
                .data
                .iter_mut()
                .zip(m.data.iter_mut())
                .zip(v.data.iter_mut())
                .zip(&g.data)
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
