use super::tensor::{lit, Parameterized, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
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

/// First and second moments for every param block, in declared order.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new<P: Parameterized<T> + ?Sized>(params: &P, config: AdamConfig) -> Self {
        let shapes: Vec<usize> = params.params().iter().map(|p| p.len()).collect();
        AdamState {
            config,
            step: 0,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update in place. Gradients are left as-is.
pub fn adam_step<T: Real, P: Parameterized<T> + ?Sized>(params: &mut P, state: &mut AdamState<T>) -> Result<()> {
    let mut blocks = params.params_mut();
    if blocks.len() != state.m.len() {
        return Err(Error::OptimizerShape(format!(
            "{} param blocks but state tracks {}",
            blocks.len(),
            state.m.len()
        )));
    }
    if let Some((i, p)) = blocks.iter().enumerate().find(|(i, p)| p.len() != state.m[*i].len()) {
        return Err(Error::OptimizerShape(format!(
            "block {i} (`{}`) has {} values, state has {}",
            p.name(),
            p.len(),
            state.m[i].len()
        )));
    }

    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let (b1, b2): (T, T) = (lit(c.beta1), lit(c.beta2));
    let lr: T = lit(c.lr);
    let eps: T = lit(c.eps);
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);

    for (p, (m, v)) in blocks.iter_mut().zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for i in 0..p.value.len() {
            let g = p.grad[i];
            m[i] = b1 * m[i] + (T::one() - b1) * g;
            v[i] = b2 * v[i] + (T::one() - b2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p.value[i] = p.value[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
