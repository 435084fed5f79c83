use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> Default for AdamConfig<T> {
    fn default() -> Self {
        Self {
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }
}

/// First and second moments for a list of flat parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shapes: &[usize]) -> Self {
        Self {
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }

    pub fn for_tensors(tensors: &[&[T]]) -> Self {
        let shapes: Vec<usize> = tensors.iter().map(|t| t.len()).collect();
        Self::new(&shapes)
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    state: &mut AdamState<T>,
    lr: T,
    cfg: &AdamConfig<T>,
) -> Result<()> {
    let mismatch = || Error::Domain("adam: parameter, gradient and state shapes differ".into());
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(mismatch());
    }
    for ((p, g), (m, v)) in params.iter().zip(grads).zip(state.m.iter().zip(&state.v)) {
        if p.len() != g.len() || p.len() != m.len() || p.len() != v.len() {
            return Err(mismatch());
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let one = T::one();
    let bc1 = one - cfg.beta1.powi(t);
    let bc2 = one - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = cfg.beta1 * m[i] + (one - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (one - cfg.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = vec![1.0, -2.0, 3.0];
        let g = [0.0; 3];
        let mut s = AdamState::new(&[3]);
        for _ in 0..5 {
            adam_step(&mut [&mut p[..]], &[&g[..]], &mut s, 0.1, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(s.t, 5);
    }

    #[test]
    fn first_step_by_hand() {
        let cfg = AdamConfig::default();
        let g = [0.5f64, -2e-3, 0.0];
        let mut p = [0.0; 3];
        let mut s = AdamState::new(&[3]);
        adam_step(&mut [&mut p[..]], &[&g[..]], &mut s, 0.01, &cfg).unwrap();
        for i in 0..3 {
            // m_hat = g, v_hat = g^2 at t = 1.
            let expected = -0.01 * g[i] / (g[i].abs() + 1e-8);
            assert!((p[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_gradient_step_approaches_lr() {
        let cfg = AdamConfig::default();
        let mut p = [0.0f64];
        let mut s = AdamState::new(&[1]);
        let mut prev = 0.0;
        let mut step = 0.0;
        for _ in 0..1000 {
            adam_step(&mut [&mut p[..]], &[&[3.0][..]], &mut s, 1e-3, &cfg).unwrap();
            step = prev - p[0];
            prev = p[0];
        }
        assert!((step - 1e-3).abs() < 1e-9, "step {step}");
    }

    #[test]
    fn shape_mismatch() {
        let mut p = [0.0f64; 2];
        let mut s = AdamState::new(&[3]);
        assert!(adam_step(&mut [&mut p[..]], &[&[1.0, 1.0][..]], &mut s, 0.1, &AdamConfig::default()).is_err());
    }
}
