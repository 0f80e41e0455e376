//! Adam and plain SGD parameter updates.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::nn::Real;

/// One Adam update on a flat parameter slice. `t` is the 1-based step count
/// after this update; `m` and `v` are the running first/second moments.
#[allow(clippy::too_many_arguments)]
pub fn adam_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if grads.len() != params.len() || m.len() != params.len() || v.len() != params.len() {
        return Err(Error::validation(format!(
            "adam_step length mismatch: params {}, grads {}, m {}, v {}",
            params.len(),
            grads.len(),
            m.len(),
            v.len()
        )));
    }
    let b1 = T::from_f64(beta1);
    let b2 = T::from_f64(beta2);
    let one_minus_b1 = T::from_f64(1.0 - beta1);
    let one_minus_b2 = T::from_f64(1.0 - beta2);
    let bc1 = T::from_f64(1.0 - beta1.powi(t as i32));
    let bc2 = T::from_f64(1.0 - beta2.powi(t as i32));
    let lr_t = T::from_f64(lr);
    let eps_t = T::from_f64(eps);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + one_minus_b1 * g;
        v[i] = b2 * v[i] + one_minus_b2 * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr_t * m_hat / (v_hat.sqrt() + eps_t);
    }
    Ok(())
}

/// Adam with per-parameter moment buffers.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64, param_sizes: &[usize]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: param_sizes.iter().map(|&n| vec![T::ZERO; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![T::ZERO; n]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&[T]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::validation(format!(
                "optimizer tracks {} parameters, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        for i in 0..params.len() {
            adam_step(
                params[i].data_mut(),
                grads[i],
                &mut self.m[i],
                &mut self.v[i],
                self.t,
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
            )?;
        }
        Ok(())
    }
}

/// Plain stochastic gradient descent, kept for ablation.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Sgd { lr }
    }

    pub fn step<T: Real>(&self, params: &mut [&mut Tensor<T>], grads: &[&[T]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::validation("params/grads length mismatch"));
        }
        let lr = T::from_f64(self.lr);
        for (p, g) in params.iter_mut().zip(grads) {
            if p.numel() != g.len() {
                return Err(Error::validation("parameter/gradient shape mismatch"));
            }
            for (pi, &gi) in p.data_mut().iter_mut().zip(*g) {
                *pi -= lr * gi;
            }
        }
        Ok(())
    }
}

/// Either optimizer behind one interface.
#[derive(Debug, Clone)]
pub enum Optimizer<T> {
    Adam(Adam<T>),
    Sgd(Sgd),
}

impl<T: Real> Optimizer<T> {
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&[T]]) -> Result<()> {
        match self {
            Optimizer::Adam(a) => a.step(params, grads),
            Optimizer::Sgd(s) => s.step(params, grads),
        }
    }
}
