//! Wave kernel signature input features.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;
use crate::spectral::SpectralBasis;

/// Eigenvalues below this fraction of `λ_k` count as kernel directions.
pub const KERNEL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct WksConfig {
    pub num_energies: usize,
    /// Gaussian width as a multiple of the energy step.
    pub sigma_factor: f64,
    /// Leading eigenpairs excluded from the signature (the constant mode).
    pub skip_first: usize,
}

impl Default for WksConfig {
    fn default() -> Self {
        Self {
            num_energies: 128,
            sigma_factor: 7.0,
            skip_first: 1,
        }
    }
}

impl WksConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_energies < 2 {
            return Err(Error::InvalidInput(format!("num_energies must be >= 2, got {}", self.num_energies)));
        }
        if !(self.sigma_factor > 0.0 && self.sigma_factor.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma_factor must be positive, got {}", self.sigma_factor)));
        }
        Ok(())
    }
}

/// Log-energy grid and Gaussian width used by [`compute_wks`].
#[derive(Debug, Clone)]
pub struct EnergyGrid<T> {
    pub energies: Vec<T>,
    pub sigma: T,
    /// Number of leading eigenpairs actually skipped.
    pub skipped: usize,
}

/// Builds the energy grid, raising `skip_first` to the numerical kernel
/// dimension on multi-component meshes.
pub fn energy_grid<T: Real>(eigenvalues: &[T], cfg: &WksConfig) -> Result<EnergyGrid<T>> {
    cfg.validate()?;
    let k = eigenvalues.len();
    let lambda_k = eigenvalues.last().copied().unwrap_or_else(T::zero);
    let kernel = eigenvalues.iter().filter(|&&l| l < T::lit(KERNEL_TOLERANCE) * lambda_k).count();
    let skip = cfg.skip_first.max(kernel);
    if k <= skip + 1 {
        return Err(Error::InvalidInput(format!(
            "WKS needs more than {} eigenpairs, basis has {k}",
            skip + 1
        )));
    }
    let e_min = eigenvalues[skip].ln();
    let e_max = lambda_k.ln();
    let delta = (e_max - e_min) / T::lit(cfg.num_energies as f64);
    let sigma = T::lit(cfg.sigma_factor) * delta;
    let range = e_max - e_min;
    if !(range > T::lit(4.0) * sigma) {
        return Err(Error::InsufficientSpectrum {
            range: range.to_f64_lossless(),
            four_sigma: (T::lit(4.0) * sigma).to_f64_lossless(),
        });
    }
    let lo = e_min + T::lit(2.0) * sigma;
    let hi = e_max - T::lit(2.0) * sigma;
    let step = (hi - lo) / T::lit((cfg.num_energies - 1) as f64);
    let energies = (0..cfg.num_energies).map(|s| lo + step * T::lit(s as f64)).collect();
    Ok(EnergyGrid {
        energies,
        sigma,
        skipped: skip,
    })
}

/// `n × num_energies` wave kernel signature of every vertex.
pub fn compute_wks<T: Real>(basis: &SpectralBasis<T>, cfg: &WksConfig) -> Result<Matrix<T>> {
    let grid = energy_grid(basis.eigenvalues(), cfg)?;
    let skip = grid.skipped;
    let k = basis.k();
    let logs: Vec<T> = basis.eigenvalues()[skip..].iter().map(|l| l.ln()).collect();
    let two_var = T::lit(2.0) * grid.sigma * grid.sigma;

    // normalized filter bank, (k - skip) × num_energies
    let m = k - skip;
    let e = grid.energies.len();
    let mut filters = Matrix::zeros(m, e);
    for (s, &energy) in grid.energies.iter().enumerate() {
        let weights: Vec<T> = logs.iter().map(|&l| (-(energy - l) * (energy - l) / two_var).exp()).collect();
        let total: T = weights.iter().copied().sum();
        for (i, w) in weights.into_iter().enumerate() {
            filters[(i, s)] = w / total;
        }
    }
    let phi = basis.eigenfunctions();
    let squared = Matrix::from_fn(basis.num_vertices(), m, |x, i| {
        let v = phi[(x, i + skip)];
        v * v
    });
    let wks = squared.matmul(&filters);
    if !wks.is_finite() {
        return Err(Error::NonFinite("wave kernel signature"));
    }
    Ok(wks)
}

/// Centers every column under the vertex-area weights `mass` and scales it to
/// variance `1/c`, so rows have unit mean squared norm. Columns with no spread
/// are only centered.
pub fn standardize<T: Real>(features: &Matrix<T>, mass: &[T]) -> Result<Matrix<T>> {
    if features.rows() != mass.len() {
        return Err(Error::dims("standardize", mass.len(), features.rows()));
    }
    let total: T = mass.iter().copied().sum();
    let mut out = features.clone();
    let col_gain = T::one() / T::lit(features.cols().max(1) as f64).sqrt();
    for j in 0..features.cols() {
        let mean = (0..features.rows()).map(|i| mass[i] * features[(i, j)]).sum::<T>() / total;
        let var = (0..features.rows())
            .map(|i| mass[i] * (features[(i, j)] - mean).powi(2))
            .sum::<T>()
            / total;
        let scale = col_gain * if var > T::zero() { T::one() / var.sqrt() } else { T::one() };
        for i in 0..features.rows() {
            out[(i, j)] = (features[(i, j)] - mean) * scale;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_strictly_increasing_with_margins() {
        let ev: Vec<f64> = vec![0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
        let cfg = WksConfig {
            num_energies: 6,
            sigma_factor: 0.5,
            skip_first: 1,
        };
        let g = energy_grid(&ev, &cfg).unwrap();
        assert!(g.energies.windows(2).all(|w| w[0] < w[1]));
        let delta = 32f64.ln() / 6.0;
        assert!((g.sigma - 0.5 * delta).abs() < 1e-14);
        assert!((g.energies[0] - 2.0 * g.sigma).abs() < 1e-14);
        assert!((g.energies[5] - (32f64.ln() - 2.0 * g.sigma)).abs() < 1e-14);
    }

    #[test]
    fn standardized_rows_have_unit_mean_square() {
        let f = Matrix::from_fn(5, 2, |i, j| if j == 0 { i as f64 * 3.0 + 1.0 } else { 2.0 });
        let mass = [0.5, 1.0, 1.0, 2.0, 0.5];
        let s = standardize(&f, &mass).unwrap();
        let total: f64 = mass.iter().sum();
        let mean: f64 = (0..5).map(|i| mass[i] * s[(i, 0)]).sum::<f64>() / total;
        let var: f64 = (0..5).map(|i| mass[i] * s[(i, 0)].powi(2)).sum::<f64>() / total;
        assert!(mean.abs() < 1e-14 && (var - 0.5).abs() < 1e-14);
        assert!((0..5).all(|i| s[(i, 1)] == 0.0));
    }

    #[test]
    fn kernel_dimension_raises_skip() {
        let ev: Vec<f64> = vec![0.0, 1e-12, 1.0, 3.0, 9.0, 27.0];
        let cfg = WksConfig {
            num_energies: 4,
            sigma_factor: 0.5,
            skip_first: 1,
        };
        assert_eq!(energy_grid(&ev, &cfg).unwrap().skipped, 2);
    }

    #[test]
    fn narrow_spectrum_is_rejected() {
        // 4σ = 4·7·range/20 exceeds the range
        let ev: Vec<f64> = vec![0.0, 1.0, 1.1, 1.2];
        let cfg = WksConfig {
            num_energies: 20,
            ..WksConfig::default()
        };
        let err = energy_grid(&ev, &cfg).unwrap_err();
        assert!(matches!(err, Error::InsufficientSpectrum { .. }));
        let bad = WksConfig {
            num_energies: 1,
            ..WksConfig::default()
        };
        assert!(energy_grid(&ev, &bad).is_err());
    }
}
