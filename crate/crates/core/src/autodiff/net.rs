use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;
use crate::spectral::SpectralBasis;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub input_dim: usize,
    pub width: usize,
    pub blocks: usize,
    pub leaky_slope: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            input_dim: 128,
            width: 256,
            blocks: 4,
            leaky_slope: 0.01,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.width == 0 || self.blocks == 0 {
            return Err(Error::InvalidInput(format!("degenerate network shape {self:?}")));
        }
        if self.input_dim > self.width {
            return Err(Error::InvalidInput(format!(
                "input_dim {} exceeds width {}; the first skip connection pads, it cannot truncate",
                self.input_dim, self.width
            )));
        }
        Ok(())
    }

    /// `(name, rows, cols)` of every parameter, in storage order.
    pub fn layout(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::with_capacity(5 * self.blocks);
        for b in 0..self.blocks {
            let c = if b == 0 { self.input_dim } else { self.width };
            out.push((format!("block{b}.log_time"), 1, c));
            out.push((format!("block{b}.linear1.weight"), c, self.width));
            out.push((format!("block{b}.linear1.bias"), 1, self.width));
            out.push((format!("block{b}.linear2.weight"), self.width, self.width));
            out.push((format!("block{b}.linear2.bias"), 1, self.width));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Matrix<T>,
}

/// Stack of spectral diffusion blocks. Each block diffuses its input with
/// learned per-channel times, applies affine → leaky-ReLU → affine, and adds
/// the (zero-padded) block input back.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNet<T> {
    config: NetConfig,
    params: Vec<Parameter<T>>,
}

impl<T: Real> FeatureNet<T> {
    /// Fresh network. Diffusion times start at `initial_time` (typically the
    /// squared median edge length); affine layers are uniform in
    /// `±1/√fan_in`.
    pub fn new(config: NetConfig, initial_time: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        if !(initial_time > 0.0 && initial_time.is_finite()) {
            return Err(Error::InvalidInput(format!("initial diffusion time must be positive, got {initial_time}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let log_t = T::lit(initial_time.ln());
        // each bias follows its weight in the layout and shares its fan-in
        let mut fan_in = 1;
        let params = config
            .layout()
            .into_iter()
            .map(|(name, rows, cols)| {
                let value = if name.ends_with("log_time") {
                    Matrix::filled(rows, cols, log_t)
                } else {
                    if name.ends_with("weight") {
                        fan_in = rows;
                    }
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    Matrix::from_fn(rows, cols, |_, _| T::lit(rng.gen_range(-bound..bound)))
                };
                Parameter { name, value }
            })
            .collect();
        Ok(Self { config, params })
    }

    /// Rebuilds a network from stored tensors, checking names and shapes.
    pub fn from_parameters(config: NetConfig, params: Vec<Parameter<T>>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != params.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} parameter tensors, found {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, r, c), p) in layout.iter().zip(&params) {
            if *name != p.name || (*r, *c) != p.value.shape() {
                return Err(Error::InvalidInput(format!(
                    "parameter {} ({}x{}) does not match expected {name} ({r}x{c})",
                    p.name,
                    p.value.rows(),
                    p.value.cols()
                )));
            }
            if !p.value.is_finite() {
                return Err(Error::NonFinite("stored parameter"));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.as_slice().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Registers every parameter on the tape, in storage order.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.value.clone())).collect()
    }

    /// Records the forward pass for one shape and returns its `n × width`
    /// feature node. `bound` comes from [`FeatureNet::bind`] on the same tape
    /// and may be shared between several shapes.
    pub fn forward(&self, tape: &mut Tape<T>, bound: &[Var], basis: &SpectralBasis<T>, input: &Matrix<T>) -> Result<Var> {
        let n = basis.num_vertices();
        if input.shape() != (n, self.config.input_dim) {
            return Err(Error::dims(
                "feature network input",
                format!("{n}x{}", self.config.input_dim),
                format!("{}x{}", input.rows(), input.cols()),
            ));
        }
        if bound.len() != self.params.len() {
            return Err(Error::dims("bound parameters", self.params.len(), bound.len()));
        }
        let phi = tape.constant(basis.eigenfunctions().clone());
        let weighted = tape.constant(basis.mass_weighted().clone());
        let neg_lambda = tape.constant(Matrix::from_fn(basis.k(), 1, |i, _| -basis.eigenvalues()[i]));
        let slope = T::lit(self.config.leaky_slope);

        let mut x = tape.constant(input.clone());
        for block in bound.chunks(5) {
            let &[log_t, w1, b1, w2, b2] = block else {
                unreachable!("parameters come in groups of five")
            };
            // x ↦ Φ (e^{-Λ t} ⊙ Φᵀ A x), one time per channel
            let t = tape.exp(log_t);
            let decay_arg = tape.matmul(neg_lambda, t)?;
            let decay = tape.exp(decay_arg);
            let coeffs = tape.matmul_t(weighted, true, x, false)?;
            let filtered = tape.mul(coeffs, decay)?;
            let diffused = tape.matmul(phi, filtered)?;

            let h = tape.matmul(diffused, w1)?;
            let h = tape.add_row(h, b1)?;
            let h = tape.leaky_relu(h, slope);
            let o = tape.matmul(h, w2)?;
            let o = tape.add_row(o, b2)?;
            let skip = if tape.shape(x).1 == self.config.width {
                x
            } else {
                tape.pad_columns(x, self.config.width)?
            };
            x = tape.add(skip, o)?;
        }
        if !tape.value(x).is_finite() {
            return Err(Error::NonFinite("feature activations"));
        }
        Ok(x)
    }

    /// Forward pass without gradient bookkeeping beyond a throwaway tape.
    pub fn features(&self, basis: &SpectralBasis<T>, input: &Matrix<T>) -> Result<Matrix<T>> {
        let mut tape = Tape::new();
        let bound: Vec<Var> = self.params.iter().map(|p| tape.constant(p.value.clone())).collect();
        let out = self.forward(&mut tape, &bound, basis, input)?;
        Ok(tape.value(out).clone())
    }
}
