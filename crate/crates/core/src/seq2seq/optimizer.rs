//! Adam over a flat parameter vector.

#[derive(Debug, Clone)]
pub(crate) struct AdamState {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn set_learning_rate(&mut self, learning_rate: f64) {
        self.learning_rate = learning_rate;
    }

    /// One update, with bias-corrected first and second moments.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        assert_eq!(theta.len(), grad.len());
        assert_eq!(theta.len(), self.m.len());
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descends_a_quadratic() {
        // f(x) = (x - 3)^2, gradient 2(x - 3)
        let mut adam = AdamState::new(1, 0.1);
        let mut theta = vec![0.0];
        for _ in 0..500 {
            let grad = vec![2.0 * (theta[0] - 3.0)];
            adam.step(&mut theta, &grad);
        }
        assert!((theta[0] - 3.0).abs() < 1e-3, "theta = {}", theta[0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // with bias correction the first update is lr * sign(grad)
        let mut adam = AdamState::new(2, 0.01);
        let mut theta = vec![1.0, -1.0];
        adam.step(&mut theta, &[0.5, -2.0]);
        assert!((theta[0] - (1.0 - 0.01)).abs() < 1e-6);
        assert!((theta[1] - (-1.0 + 0.01)).abs() < 1e-6);
    }
}
