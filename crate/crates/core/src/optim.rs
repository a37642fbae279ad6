//! Adam with bias correction, minimizing.

use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    /// Optional multiplicative decay: the rate is scaled by `decay.0` every `decay.1` steps.
    pub decay: Option<(T, usize)>,
    m: Vec<T>,
    v: Vec<T>,
    t: usize,
}

impl<T: Scalar> Adam<T> {
    /// Standard moments `beta1 = 0.9`, `beta2 = 0.999`, `epsilon = 1e-8`.
    pub fn new(dim: usize, learning_rate: T) -> Self {
        Self {
            learning_rate,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            epsilon: T::lit(1e-8),
            decay: None,
            m: vec![T::zero(); dim],
            v: vec![T::zero(); dim],
            t: 0,
        }
    }

    pub fn with_decay(mut self, factor: T, every: usize) -> Self {
        self.decay = Some((factor, every.max(1)));
        self
    }

    pub fn steps_taken(&self) -> usize {
        self.t
    }

    pub fn current_rate(&self) -> T {
        match self.decay {
            Some((factor, every)) => {
                self.learning_rate * factor.powi((self.t / every) as i32)
            }
            None => self.learning_rate,
        }
    }

    /// One update of `params` against `grad`.
    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        assert_eq!(params.len(), self.m.len(), "Adam state/parameter size mismatch");
        assert_eq!(grad.len(), self.m.len(), "Adam state/gradient size mismatch");
        let lr = self.current_rate();
        self.t += 1;
        let one = T::one();
        let t = self.t as i32;
        let bc1 = one - self.beta1.powi(t);
        let bc2 = one - self.beta2.powi(t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (one - self.beta1) * g;
            *v = self.beta2 * *v + (one - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}
