//! Empirical convergence rates on a well-specified synthetic problem.
//!
//! Inputs are Brownian bridges on `[0, 1]`, the kernel is the first-order
//! Sobolev kernel with Dirichlet conditions on `[0, 1]^2`, and the true Green's
//! function is drawn inside its RKHS. Covariance and kernel then share the sine
//! eigenbasis, so the joint spectrum `gamma_ij = mu_i rho_ij` is available and
//! its fitted decay `r` sets the regularization schedule `lambda ~ n^{-r/(r+1)}`.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DMatrix;

use super::{fit_decay_rate, mercer_eig, sim_diag_commuting};
use crate::error::{invalid, Result};
use crate::estimator::{AssembledModel, GreensModel};
use crate::grid::Grid;
use crate::kernels::{KernelOperator, KernelSpec};
use crate::pde::Dataset;
use crate::stochastic::{add_noise, BridgeSampler, FunctionSample, RngState};
use crate::training::{mse, solve_exact_weights};

/// Settings of a rate study.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct StudyConfig {
    /// Points per axis of the input and output grids.
    pub grid_points: usize,
    pub n_list: Vec<usize>,
    pub trials: usize,
    pub test_samples: usize,
    /// `lambda(n) = lambda_at_first * (n / n_list[0])^{-exponent}`.
    pub lambda_at_first: f64,
    /// Overrides the exponent `r / (r + 1)` derived from the fitted joint spectrum.
    pub exponent: Option<f64>,
    /// Relative output noise level.
    pub noise: f64,
    pub bridge_modes: usize,
    /// Sine modes per axis in the true Green's function.
    pub truth_modes: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            grid_points: 20,
            n_list: vec![50, 100, 200, 400],
            trials: 10,
            test_samples: 1000,
            lambda_at_first: 1e-4,
            exponent: None,
            noise: 0.1,
            bridge_modes: 50,
            truth_modes: 8,
        }
    }
}

/// One row of the study table.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StudyRow {
    pub n: usize,
    pub lambda: f64,
    pub mean_excess: f64,
    /// Standard error of the mean over trials.
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
    /// Fitted decay of the joint spectrum `gamma`.
    pub gamma_rate: f64,
    pub exponent: f64,
    /// Least-squares slope of `log excess` against `log n`; absent for one row.
    pub slope: Option<f64>,
}

impl StudyTable {
    /// Every step in `n` is nonincreasing up to two combined standard errors.
    pub fn monotone_within_two_sigma(&self) -> bool {
        self.rows.windows(2).all(|w| {
            let band = 2.0 * libm::sqrt(w[0].std_error * w[0].std_error + w[1].std_error * w[1].std_error);
            w[1].mean_excess <= w[0].mean_excess + band
        })
    }
}

/// Numeric joint spectrum of the bridge covariance and the Dirichlet kernel on
/// `grid_points`-point grids, sorted decreasing.
pub fn bridge_dirichlet_gamma(grid_points: usize) -> Result<Vec<f64>> {
    let g = Grid::uniform((0.0, 1.0), grid_points)?;
    let modes = grid_points - 2;
    let cov = mercer_eig(&KernelSpec::BrownianBridge { sigma2: 1.0 }, &g, modes)?;
    let xy = Grid::tensor(&[g.clone(), g.clone()])?;
    let kernel = KernelSpec::sobolev1_dirichlet(2);
    let op = KernelOperator::between(&kernel, &xy, &xy)?;
    let w = xy.weights();
    let m = grid_points;
    let mut rho = vec![vec![0.0; modes]; modes];
    for (i, row) in rho.iter_mut().enumerate() {
        for (j, r) in row.iter_mut().enumerate() {
            let psi: Vec<f64> = (0..m * m)
                .map(|k| cov.eigenvectors[(k / m, i)] * cov.eigenvectors[(k % m, j)])
                .collect();
            let wpsi: Vec<f64> = psi.iter().zip(w).map(|(p, w)| p * w).collect();
            *r = op.apply(&wpsi).iter().zip(&wpsi).map(|(a, b)| a * b).sum();
        }
    }
    Ok(sim_diag_commuting(&cov.eigenvalues, &rho)?.gamma)
}

fn truth(grid: &Grid, modes: usize, rng: &mut RngState) -> DMatrix<f64> {
    let m = grid.len();
    let mut g = DMatrix::zeros(m, m);
    for i in 1..=modes {
        for j in 1..=modes {
            let c = rng.normal() / (PI * PI * (i * i + j * j) as f64);
            for s in 0..m {
                let a = 2.0 * c * libm::sin(PI * i as f64 * grid.point(s)[0]);
                for t in 0..m {
                    g[(s, t)] += a * libm::sin(PI * j as f64 * grid.point(t)[0]);
                }
            }
        }
    }
    g
}

fn one_trial(config: &StudyConfig, grid: &Arc<Grid>, lambdas: &[f64], seed: u64, trial: usize) -> Result<Vec<f64>> {
    let base = 3 * trial as u64;
    let oracle = AssembledModel {
        g: truth(grid, config.truth_modes, &mut RngState::stream(seed, base)),
        beta: vec![0.0; grid.len()],
        x_grid: grid.clone(),
        y_grid: grid.clone(),
    };
    let sampler = BridgeSampler::new(grid.clone(), config.bridge_modes, 1.0, 1.0, 0.0)?;
    let draw = |count: usize, stream: u64, noisy: bool| -> Result<(Vec<FunctionSample>, Vec<FunctionSample>)> {
        let mut rng = RngState::stream(seed, stream);
        let mut fs = Vec::with_capacity(count);
        let mut us = Vec::with_capacity(count);
        for _ in 0..count {
            let f = sampler.sample(&mut rng);
            let u = oracle.forward(&f)?;
            us.push(if noisy { add_noise(&u, config.noise, &mut rng)? } else { u });
            fs.push(f);
        }
        Ok((fs, us))
    };
    let n_max = *config.n_list.iter().max().unwrap_or(&0);
    let (pool_f, pool_u) = draw(n_max, base + 2, true)?;
    let (test_f, test_u) = draw(config.test_samples, base + 1, false)?;
    let test = Dataset::new(grid.clone(), grid.clone(), test_f, test_u, seed)?;
    let (test_x, test_y) = (test.input_matrix(), test.output_matrix());
    config
        .n_list
        .iter()
        .zip(lambdas)
        .map(|(&n, &lambda)| {
            let data = Dataset::new(grid.clone(), grid.clone(), pool_f[..n].to_vec(), pool_u[..n].to_vec(), seed)?;
            let mut model = GreensModel::new(
                KernelSpec::sobolev1_dirichlet(2),
                None,
                grid.clone(),
                grid.clone(),
                lambda,
                0.0,
            )?;
            model.set_params(solve_exact_weights(&model, &data)?)?;
            let preds = model.assemble_training().forward_matrix(&test_x)?;
            mse(&preds, &test_y, grid)
        })
        .collect()
}

/// Mean excess risk over trials for every `n`, with the fitted log-log slope.
///
/// Each trial draws its own true Green's function, a noisy training pool whose
/// prefixes give the datasets for the different `n`, and a noiseless test set.
/// The excess risk of an estimate is its test MSE against the noiseless outputs.
pub fn convergence_study(config: &StudyConfig, rng: &RngState) -> Result<StudyTable> {
    if config.n_list.is_empty() || config.n_list.contains(&0) {
        return Err(invalid("n_list must be nonempty with positive entries"));
    }
    if config.trials == 0 || config.test_samples == 0 {
        return Err(invalid("need at least one trial and one test sample"));
    }
    if !(config.lambda_at_first > 0.0) {
        return Err(invalid("lambda_at_first must be positive"));
    }
    if config.grid_points < 7 {
        return Err(invalid("grid needs at least 7 points for a decay fit"));
    }
    let gamma = bridge_dirichlet_gamma(config.grid_points)?;
    let positive: Vec<f64> = gamma.iter().copied().take_while(|&g| g > 0.0).collect();
    let gamma_rate = fit_decay_rate(&positive)?.rate;
    let exponent = config.exponent.unwrap_or(gamma_rate / (gamma_rate + 1.0));
    let n0 = config.n_list[0] as f64;
    let lambdas: Vec<f64> = config
        .n_list
        .iter()
        .map(|&n| config.lambda_at_first * libm::pow(n as f64 / n0, -exponent))
        .collect();
    let grid = Arc::new(Grid::uniform((0.0, 1.0), config.grid_points)?);
    let seed = rng.seed();

    let run = |t: usize| one_trial(config, &grid, &lambdas, seed, t);
    #[cfg(feature = "std")]
    let results: Result<Vec<Vec<f64>>> = {
        use rayon::prelude::*;
        (0..config.trials).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "std"))]
    let results: Result<Vec<Vec<f64>>> = (0..config.trials).map(run).collect();
    let results = results?;

    let k = config.trials as f64;
    let rows: Vec<StudyRow> = config
        .n_list
        .iter()
        .enumerate()
        .map(|(j, &n)| {
            let mean = results.iter().map(|r| r[j]).sum::<f64>() / k;
            let var = if config.trials > 1 {
                results.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<f64>() / (k - 1.0)
            } else {
                0.0
            };
            StudyRow {
                n,
                lambda: lambdas[j],
                mean_excess: mean,
                std_error: libm::sqrt(var / k),
            }
        })
        .collect();
    let slope = if rows.len() > 1 {
        let xs: Vec<f64> = rows.iter().map(|r| libm::log(r.n as f64)).collect();
        let ys: Vec<f64> = rows.iter().map(|r| libm::log(r.mean_excess)).collect();
        let mx = xs.iter().sum::<f64>() / xs.len() as f64;
        let my = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        Some(sxy / sxx)
    } else {
        None
    };
    if rows.iter().any(|r| !r.mean_excess.is_finite()) {
        return Err(crate::error::Error::Internal(format!("non-finite excess risk in {rows:?}")));
    }
    Ok(StudyTable {
        rows,
        gamma_rate,
        exponent,
        slope,
    })
}
