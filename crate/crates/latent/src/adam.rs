//! Adam with bias correction, matching the usual reference update.

pub trait AdamScalar: Copy + Default {
    /// One elementwise update with precomputed bias corrections `c1`, `c2`.
    #[allow(clippy::too_many_arguments)]
    fn update(params: &mut [Self], grads: &[Self], m: &mut [Self], v: &mut [Self], b1: f64, b2: f64, c1: f64, c2: f64, lr: f64, eps: f64);
}

macro_rules! adam_scalar {
    ($t:ty) => {
        impl AdamScalar for $t {
            fn update(params: &mut [$t], grads: &[$t], m: &mut [$t], v: &mut [$t], b1: f64, b2: f64, c1: f64, c2: f64, lr: f64, eps: f64) {
                let (b1, b2, eps) = (b1 as $t, b2 as $t, eps as $t);
                let step = (lr / c1) as $t;
                let inv_c2 = (1.0 / c2) as $t;
                for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= step * *m / ((*v * inv_c2).sqrt() + eps);
                }
            }
        }
    };
}

adam_scalar!(f32);
adam_scalar!(f64);

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: i32,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: AdamScalar> Adam<T> {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            m: vec![T::default(); n],
            v: vec![T::default(); n],
        }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        T::update(params, grads, &mut self.m, &mut self.v, self.beta1, self.beta2, c1, c2, lr, self.eps);
    }
}
