use super::{GradBundle, Matrix, MlpParams};
use crate::error::{DsrlError, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m_w: Vec<Matrix>,
    pub m_b: Vec<Vec<f64>>,
    pub v_w: Vec<Matrix>,
    pub v_b: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        let zw = || params.weights().iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect();
        let zb = || params.biases().iter().map(|b| vec![0.0; b.len()]).collect();
        AdamState { m_w: zw(), m_b: zb(), v_w: zw(), v_b: zb(), t: 0 }
    }
}

impl Adam {
    /// One descent step `params ← params − lr · m̂ / (√v̂ + ε)`.
    ///
    /// Gradients are checked before anything is touched, so on error both
    /// the parameters and the moments are unchanged.
    pub fn step(
        &self,
        params: &mut MlpParams,
        grads: &GradBundle,
        state: &mut AdamState,
        lr: f64,
    ) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(DsrlError::Argument(format!("learning rate must be positive, got {lr}")));
        }
        let layers = params.num_layers();
        let shapes_ok = grads.weights.len() == layers
            && grads.biases.len() == layers
            && state.m_w.len() == layers
            && (0..layers).all(|l| {
                grads.weights[l].shape() == params.weights()[l].shape()
                    && grads.biases[l].len() == params.biases()[l].len()
                    && state.m_w[l].shape() == params.weights()[l].shape()
            });
        if !shapes_ok {
            return Err(DsrlError::Shape("adam: gradient/state shapes differ from parameters".into()));
        }
        for l in 0..layers {
            if !grads.weights[l].is_finite() || grads.biases[l].iter().any(|g| !g.is_finite()) {
                return Err(DsrlError::NonFiniteGradient { layer: l });
            }
        }
        state.t += 1;
        let bc1 = 1.0 - self.beta1.powi(state.t as i32);
        let bc2 = 1.0 - self.beta2.powi(state.t as i32);
        for l in 0..layers {
            self.update(
                params.weights_mut()[l].data_mut(),
                grads.weights[l].data(),
                state.m_w[l].data_mut(),
                state.v_w[l].data_mut(),
                lr,
                bc1,
                bc2,
            );
            self.update(
                &mut params.biases_mut()[l],
                &grads.biases[l],
                &mut state.m_b[l],
                &mut state.v_b[l],
                lr,
                bc1,
                bc2,
            );
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn update(&self, p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, bc1: f64, bc2: f64) {
        for i in 0..p.len() {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
