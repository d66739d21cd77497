use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
}

/// First and second moments for each parameter tensor, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let m: Vec<Tensor<T>> = shapes.into_iter().map(Tensor::zeros).collect();
        AdamState {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub state: AdamState<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new<'a>(config: AdamConfig, shapes: impl IntoIterator<Item = &'a [usize]>) -> Result<Self> {
        // Also rejects NaN.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(config.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", config.lr)));
        }
        Ok(Adam {
            config,
            state: AdamState::new(shapes),
        })
    }

    /// One update of every parameter from its gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.state.m.len() {
            return Err(Error::dim(
                "adam_step",
                format!(
                    "{} params, {} grads, {} moments",
                    params.len(),
                    grads.len(),
                    self.state.m.len()
                ),
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.state.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::dim(
                    "adam_step",
                    format!("{:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
        }
        self.state.step += 1;
        let c = self.config;
        let t = self.state.step as i32;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let corr1 = T::one() - T::of(c.beta1.powi(t));
        let corr2 = T::one() - T::of(c.beta2.powi(t));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));

        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.state.m[i].data_mut();
            let v = self.state.v[i].data_mut();
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mv = b1 * *mv + one_b1 * gv;
                *vv = b2 * *vv + one_b2 * gv * gv;
                let m_hat = *mv / corr1;
                let v_hat = *vv / corr2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
