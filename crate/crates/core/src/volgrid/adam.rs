use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::tensor::{lit, Real};

/// Adam hyperparameters. The default is `lr = 1e-3, beta1 = 0.9,
/// beta2 = 0.999, epsilon = 1e-7`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam hyperparameters {self:?}")))
        }
    }
}

/// First/second moment buffers plus the step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub step_count: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(n_params: usize) -> Self {
        Self {
            step_count: 0,
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    hyper: &AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || state.m.len() != state.v.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "params {}, grads {}, m {}, v {}",
                params.len(),
                grads.len(),
                state.m.len(),
                state.v.len()
            ),
        ));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let b1: T = lit(hyper.beta1);
    let b2: T = lit(hyper.beta2);
    let one = T::one();
    let c1: T = lit(1.0 - hyper.beta1.powi(t));
    let c2: T = lit(1.0 - hyper.beta2.powi(t));
    let lr: T = lit(hyper.lr);
    let eps: T = lit(hyper.epsilon);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (one - b1) * *g;
        *v = b2 * *v + (one - b2) * *g * *g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = vec![1.0f64, -2.0, 3.5];
        let mut st = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut st, &AdamHyper::default()).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = vec![1.0f64];
        let mut st = AdamState::new(1);
        adam_step(&mut p, &[0.5], &mut st, &AdamHyper::default()).unwrap();
        let want = 1.0 - 0.001 * 0.5 / (0.5 + 1e-7);
        assert!((p[0] - want).abs() < 1e-15);
        assert!((p[0] - 0.999).abs() < 1e-6);
    }

    #[test]
    fn three_step_quadratic_matches_hand_recurrence() {
        // loss = (p - 3)^2, grad = 2 (p - 3)
        let h = AdamHyper::default();
        let mut p = vec![0.5f64];
        let mut st = AdamState::new(1);
        let (mut q, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            let g = 2.0 * (p[0] - 3.0);
            adam_step(&mut p, &[g], &mut st, &h).unwrap();
            let gq = 2.0 * (q - 3.0);
            m = 0.9 * m + 0.1 * gq;
            v = 0.999 * v + 0.001 * gq * gq;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            q -= 1e-3 * mh / (vh.sqrt() + 1e-7);
            assert!((p[0] - q).abs() < 1e-12, "step {t}: {} vs {q}", p[0]);
        }
        assert_eq!(st.step_count, 3);
    }

    #[test]
    fn rejects_count_mismatch_and_bad_hyper() {
        let mut p = vec![0.0f32; 2];
        let mut st = AdamState::new(3);
        assert!(adam_step(&mut p, &[0.0; 2], &mut st, &AdamHyper::default()).is_err());
        let bad = AdamHyper {
            beta1: 1.0,
            ..AdamHyper::default()
        };
        assert!(bad.validate().is_err());
        AdamHyper::default().validate().unwrap();
    }
}
