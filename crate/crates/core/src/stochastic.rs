//! Random input functions from truncated Karhunen-Loeve expansions, and output noise.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::grid::Grid;
use crate::kernels::KernelSpec;
use crate::spectral::mercer_eig;

/// Values of a function at the points of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionSample {
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
}

impl FunctionSample {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<FunctionSample> {
        if values.len() != grid.len() {
            return Err(invalid(format!(
                "sample has {} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("sample value {i} is not finite")));
        }
        Ok(FunctionSample { grid, values })
    }

    pub fn zeros(grid: Arc<Grid>) -> FunctionSample {
        let n = grid.len();
        FunctionSample {
            grid,
            values: alloc::vec![0.0; n],
        }
    }

    /// Weighted root-mean-square `sqrt(int v^2 / |D|)`.
    pub fn rms(&self) -> f64 {
        let total: f64 = self.grid.weights().iter().sum();
        libm::sqrt(self.grid.norm_sq(&self.values) / total)
    }
}

/// Seeded random stream. Identical seeds and call sequences give identical draws.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> RngState {
        RngState {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// An independent stream derived from the same seed, e.g. one per sample.
    pub fn stream(seed: u64, stream: u64) -> RngState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngState { seed, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Position within the current stream, in 32-bit words.
    pub fn position(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.gen()
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> core::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// Brownian-bridge forcing `offset + scale * sigma * sum_k xi_k sqrt(2) sin(pi k x) / (pi k)`.
#[derive(Debug, Clone)]
pub struct BridgeSampler {
    grid: Arc<Grid>,
    /// `m x n_modes` basis, already multiplied by `scale * sigma`.
    basis: DMatrix<f64>,
    offset_sigma: f64,
}

impl BridgeSampler {
    pub fn new(grid: Arc<Grid>, n_modes: usize, sigma: f64, scale: f64, offset_sigma: f64) -> Result<BridgeSampler> {
        if grid.dims() != 1 || !grid.same_domain(&Grid::uniform((0.0, 1.0), 2)?) {
            return Err(invalid("brownian bridge samples live on a 1D grid over [0, 1]"));
        }
        if n_modes == 0 {
            return Err(invalid("brownian bridge needs at least one mode"));
        }
        if !(offset_sigma >= 0.0) {
            return Err(invalid("offset standard deviation must be nonnegative"));
        }
        let c = scale * sigma * SQRT_2;
        let basis = DMatrix::from_fn(grid.len(), n_modes, |i, k| {
            let kf = PI * (k + 1) as f64;
            c * libm::sin(kf * grid.point(i)[0]) / kf
        });
        Ok(BridgeSampler {
            grid,
            basis,
            offset_sigma,
        })
    }

    pub fn sample(&self, rng: &mut RngState) -> FunctionSample {
        let xi = nalgebra::DVector::from_fn(self.basis.ncols(), |_, _| rng.normal());
        let offset = if self.offset_sigma > 0.0 {
            self.offset_sigma * rng.normal()
        } else {
            0.0
        };
        let v = &self.basis * xi;
        FunctionSample {
            grid: self.grid.clone(),
            values: v.iter().map(|x| x + offset).collect(),
        }
    }
}

pub fn sample_brownian_bridge(
    grid: Arc<Grid>,
    n_modes: usize,
    sigma: f64,
    scale: f64,
    offset_sigma: f64,
    rng: &mut RngState,
) -> Result<FunctionSample> {
    Ok(BridgeSampler::new(grid, n_modes, sigma, scale, offset_sigma)?.sample(rng))
}

/// Gaussian process with covariance `exp(-|x - y| / l)` expanded in its leading
/// numerical Mercer modes on the grid.
#[derive(Debug, Clone)]
pub struct KlSampler {
    grid: Arc<Grid>,
    /// `m x n_modes`, columns `sqrt(lambda_k) phi_k`.
    basis: DMatrix<f64>,
}

impl KlSampler {
    pub fn new(grid: Arc<Grid>, n_modes: usize, length: f64) -> Result<KlSampler> {
        if n_modes == 0 || n_modes > grid.len() {
            return Err(invalid(format!(
                "KL expansion needs 1 <= n_modes <= {} grid points, got {n_modes}",
                grid.len()
            )));
        }
        let spec = KernelSpec::Exponential {
            length,
            axes: grid.dims(),
        };
        let report = mercer_eig(&spec, &grid, n_modes)?;
        let top = report.eigenvalues.first().copied().unwrap_or(0.0);
        if let Some(&bad) = report.eigenvalues.iter().find(|&&l| l < -1e-8 * top.abs()) {
            return Err(Error::Internal(format!(
                "covariance spectrum has eigenvalue {bad} below the PSD tolerance"
            )));
        }
        let mut basis = report.eigenvectors;
        for (k, &l) in report.eigenvalues.iter().enumerate() {
            let s = libm::sqrt(l.max(0.0));
            basis.column_mut(k).scale_mut(s);
        }
        Ok(KlSampler { grid, basis })
    }

    pub fn sample(&self, rng: &mut RngState) -> FunctionSample {
        let xi = nalgebra::DVector::from_fn(self.basis.ncols(), |_, _| rng.normal());
        FunctionSample {
            grid: self.grid.clone(),
            values: (&self.basis * xi).as_slice().to_vec(),
        }
    }
}

pub fn sample_kl_exponential(
    grid: Arc<Grid>,
    n_modes: usize,
    length: f64,
    rng: &mut RngState,
) -> Result<FunctionSample> {
    Ok(KlSampler::new(grid, n_modes, length)?.sample(rng))
}

/// Add white noise with standard deviation `level * rms(sample)` at every point.
pub fn add_noise(sample: &FunctionSample, level: f64, rng: &mut RngState) -> Result<FunctionSample> {
    if !(level >= 0.0) {
        return Err(invalid("noise level must be nonnegative"));
    }
    if level == 0.0 {
        return Ok(sample.clone());
    }
    let std = level * sample.rms();
    Ok(FunctionSample {
        grid: sample.grid.clone(),
        values: sample.values.iter().map(|v| v + std * rng.normal()).collect(),
    })
}
