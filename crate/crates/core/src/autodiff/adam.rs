use super::Parameter;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Moment estimates for Adam with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Matrix<T>>,
    second: Vec<Matrix<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Parameter<T>]) -> Self {
        let zeros = || params.iter().map(|p| Matrix::zeros(p.value.rows(), p.value.cols())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    /// Restores a saved state. `first` and `second` follow parameter order.
    pub fn from_moments(step: u64, first: Vec<Matrix<T>>, second: Vec<Matrix<T>>) -> Result<Self> {
        if first.len() != second.len() || first.iter().zip(&second).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::InvalidInput("adam moment tensors do not pair up".into()));
        }
        Ok(Self {
            step,
            first,
            second,
            ..Self::new(&[])
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Matrix<T>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Matrix<T>] {
        &self.second
    }

    /// Errors unless the moments have the shapes of `params`.
    pub fn check_compatible(&self, params: &[Parameter<T>]) -> Result<()> {
        let expected: Vec<_> = params.iter().map(|p| p.value.shape()).collect();
        let found: Vec<_> = self.first.iter().map(|m| m.shape()).collect();
        if expected != found {
            return Err(Error::dims("optimizer state", format!("{} tensors {expected:?}", expected.len()), format!("{} tensors {found:?}", found.len())));
        }
        Ok(())
    }

    /// One update of `params` with `grads` (same order and shapes).
    pub fn step(&mut self, params: &mut [Parameter<T>], grads: &[Matrix<T>], lr: f64) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::dims("adam step", self.first.len(), grads.len()));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.value.shape() != g.shape() {
                return Err(Error::dims(
                    "adam gradient",
                    format!("{:?}", p.value.shape()),
                    format!("{:?}", g.shape()),
                ));
            }
        }
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::one() - T::lit(self.beta1.powi(self.step as i32));
        let c2 = T::one() - T::lit(self.beta2.powi(self.step as i32));
        let (lr, eps) = (T::lit(lr), T::lit(self.eps));
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.first.iter_mut().zip(self.second.iter_mut())) {
            let values = p.value.as_mut_slice();
            let (ms, vs) = (m.as_mut_slice(), v.as_mut_slice());
            for (i, &gi) in g.as_slice().iter().enumerate() {
                ms[i] = b1 * ms[i] + (T::one() - b1) * gi;
                vs[i] = b2 * vs[i] + (T::one() - b2) * gi * gi;
                let m_hat = ms[i] / c1;
                let v_hat = vs[i] / c2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
