use dsrl_core::net::{Activation, MlpParams, OutputActivation};

/// Forward pass re-evaluated with nested loops over the raw parameters.
pub fn straight_line_forward(params: &MlpParams, input: &[f64]) -> Vec<f64> {
    let layers = params.num_layers();
    let mut a = input.to_vec();
    for l in 0..layers {
        let w = &params.weights()[l];
        let b = &params.biases()[l];
        let mut z = vec![0.0; w.rows()];
        for i in 0..w.rows() {
            let mut acc = b[i];
            for j in 0..w.cols() {
                acc += w[(i, j)] * a[j];
            }
            z[i] = acc;
        }
        a = if l + 1 < layers {
            z.iter()
                .map(|&v| match params.hidden_activation() {
                    Activation::Tanh => v.tanh(),
                    Activation::Relu => {
                        if v > 0.0 {
                            v
                        } else {
                            0.0
                        }
                    }
                })
                .collect()
        } else {
            match params.output_activation() {
                OutputActivation::Identity => z,
                OutputActivation::ScaledTanh { lower, upper } => z
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| lower[j] + (upper[j] - lower[j]) * 0.5 * (1.0 + v.tanh()))
                    .collect(),
            }
        };
    }
    a
}

/// All parameters in layer order: weights row-major, then biases.
pub fn flatten(params: &MlpParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(params.num_params());
    for l in 0..params.num_layers() {
        out.extend_from_slice(params.weights()[l].data());
        out.extend_from_slice(&params.biases()[l]);
    }
    out
}

/// Writes a flat vector produced by [`flatten`] back.
pub fn unflatten(params: &mut MlpParams, flat: &[f64]) {
    let mut k = 0;
    for l in 0..params.num_layers() {
        let w = params.weights_mut()[l].data_mut();
        w.copy_from_slice(&flat[k..k + w.len()]);
        k += w.len();
        let b = &mut params.biases_mut()[l];
        let len = b.len();
        b.copy_from_slice(&flat[k..k + len]);
        k += len;
    }
}

/// Textbook Adam on a flat parameter vector, one call per step.
#[derive(Debug, Clone)]
pub struct ScriptedAdam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl ScriptedAdam {
    pub fn new(len: usize) -> Self {
        ScriptedAdam { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-8);
        self.t += 1;
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grads[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grads[i] * grads[i];
            let m_hat = self.m[i] / (1.0 - b1.powi(self.t));
            let v_hat = self.v[i] / (1.0 - b2.powi(self.t));
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
