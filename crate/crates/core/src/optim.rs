//! Adam over a flat parameter array made of equally sized records.

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    stride: usize,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    /// State for `records` records of `stride` parameters each.
    pub fn new(beta1: f64, beta2: f64, eps: f64, stride: usize, records: usize) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            stride,
            m: vec![0.0; stride * records],
            v: vec![0.0; stride * records],
            step: 0,
        }
    }

    pub fn records(&self) -> usize {
        self.m.len() / self.stride
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. `lr` holds one learning rate per position in a record.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        assert_eq!(lr.len(), self.stride);
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr[i % self.stride] * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    /// Rebuilds the state after records were added or removed. Entry `k`
    /// of `sources` names the old record the new record `k` inherits from;
    /// `None` starts from zero moments.
    pub fn remap(&mut self, sources: &[Option<usize>]) {
        let s = self.stride;
        let mut m = vec![0.0; s * sources.len()];
        let mut v = vec![0.0; s * sources.len()];
        for (k, src) in sources.iter().enumerate() {
            if let Some(j) = src {
                m[k * s..(k + 1) * s].copy_from_slice(&self.m[j * s..(j + 1) * s]);
                v[k * s..(k + 1) * s].copy_from_slice(&self.v[j * s..(j + 1) * s]);
            }
        }
        self.m = m;
        self.v = v;
    }

    /// Clears both moments of one position in every record.
    pub fn reset_position(&mut self, offset: usize) {
        for k in 0..self.records() {
            self.m[k * self.stride + offset] = 0.0;
            self.v[k * self.stride + offset] = 0.0;
        }
    }
}

/// Log-linear interpolation from `start` to `end` over `max_steps`.
pub fn exponential_decay(start: f64, end: f64, step: usize, max_steps: usize) -> f64 {
    if max_steps == 0 {
        return end;
    }
    let t = (step as f64 / max_steps as f64).clamp(0.0, 1.0);
    (start.ln() * (1.0 - t) + end.ln() * t).exp()
}
