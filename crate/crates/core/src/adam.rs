//! Bias-corrected Adam.

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper { lr, ..Default::default() }
    }
}

/// First/second moment buffers for one parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn step(&mut self, hp: &AdamHyper, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "adam state length mismatch");
        assert_eq!(params.len(), grads.len(), "adam gradient length mismatch");
        self.t += 1;
        let bc1 = 1.0 - hp.beta1.powi(self.t as i32);
        let bc2 = 1.0 - hp.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = hp.beta1 * self.m[i] + (1.0 - hp.beta1) * g;
            self.v[i] = hp.beta2 * self.v[i] + (1.0 - hp.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= hp.lr * mhat / (vhat.sqrt() + hp.eps);
        }
    }
}
