use super::Tensor;

/// Adam with bias correction. Update order is fixed by the caller's
/// parameter order, so runs are bitwise reproducible.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64, param_lens: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update over all parameters; `grads[i]` pairs with `params[i]`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i];
            assert_eq!(p.len(), g.len(), "param/grad length mismatch at {i}");
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let gj = g.data[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p.data[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::vector(vec![1.0, -2.0, 3.0]);
        let g = Tensor::zeros(vec![3]);
        let mut adam = AdamState::new(1e-3, &[3]);
        let before = p.clone();
        for _ in 0..5 {
            adam.step(&mut [&mut p], &[&g]);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn quadratic_bowl_converges_monotonically_in_tail() {
        // f(x) = ||x||^2, gradient 2x
        let mut x = Tensor::vector(vec![1.0, -0.7]);
        let mut adam = AdamState::new(0.05, &[2]);
        let f = |x: &Tensor| -> f64 { x.data.iter().map(|v| v * v).sum() };
        let mut values = Vec::new();
        for _ in 0..400 {
            let g = Tensor::vector(x.data.iter().map(|v| 2.0 * v).collect());
            adam.step(&mut [&mut x], &[&g]);
            values.push(f(&x));
        }
        // Adam oscillates near the minimum, so assert descent over coarse
        // windows rather than per step
        let window_max =
            |lo: usize, hi: usize| values[lo..hi].iter().cloned().fold(0.0_f64, f64::max);
        assert!(window_max(100, 200) < window_max(0, 100));
        assert!(window_max(300, 400) < window_max(100, 200));
        assert!(values.last().unwrap() < &1e-6);
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            let mut p = Tensor::vector(vec![0.3, 0.4]);
            let mut adam = AdamState::new(1e-2, &[2]);
            for k in 0..10 {
                let g = Tensor::vector(vec![0.1 * (k as f64 + 1.0), -0.2]);
                adam.step(&mut [&mut p], &[&g]);
            }
            p
        };
        assert_eq!(run(), run());
    }
}
