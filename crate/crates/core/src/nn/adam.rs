use super::{Parameters, Scalar};

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<F: Scalar> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Parameters<F>,
    v: Parameters<F>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(params: &Parameters<F>, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut Parameters<F>, grads: &Parameters<F>) {
        self.step += 1;
        let t = self.step as i32;
        let b1 = F::from(self.beta1).unwrap();
        let b2 = F::from(self.beta2).unwrap();
        let one = F::one();
        let c1 = F::from(1.0 - self.beta1.powi(t)).unwrap();
        let c2 = F::from(1.0 - self.beta2.powi(t)).unwrap();
        let lr = F::from(self.learning_rate).unwrap();
        let eps = F::from(self.epsilon).unwrap();

        let p_slices = params.slices_mut();
        let g_slices = grads.slices();
        let m_slices = self.m.slices_mut();
        let v_slices = self.v.slices_mut();
        for (((p, g), m), v) in p_slices
            .into_iter()
            .zip(g_slices)
            .zip(m_slices)
            .zip(v_slices)
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
