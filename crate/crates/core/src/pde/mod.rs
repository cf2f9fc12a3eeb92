//! Ground-truth data: PDE problems, their solvers, and sampled datasets.

mod green;
mod solvers;

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

pub use green::{analytic_green, GreenKind};
pub use solvers::{
    boundary_point, double_well, schrodinger_boundary_grid, schrodinger_interior_grid, solve_fokker_planck_1d,
    solve_heat_1d, solve_helmholtz_1d, solve_poisson_1d, solve_schrodinger_2d, SchrodingerSolver,
};

use crate::error::{invalid, Error, Result};
use crate::grid::{Axis, Grid};
use crate::stochastic::{add_noise, BridgeSampler, FunctionSample, KlSampler, RngState};
use crate::tensor::mode_product;

/// Potential `V >= 0` of the stationary Schrodinger problem.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "type", rename_all = "snake_case"))]
pub enum SchrodingerPotential {
    Zero,
    /// `height` on the vertical band `|x - center| < half_width`, zero elsewhere.
    Barrier { height: f64, center: f64, half_width: f64 },
}

impl SchrodingerPotential {
    pub fn value(&self, x: f64, _y: f64) -> f64 {
        match *self {
            SchrodingerPotential::Zero => 0.0,
            SchrodingerPotential::Barrier {
                height,
                center,
                half_width,
            } => {
                if (x - center).abs() < half_width {
                    height
                } else {
                    0.0
                }
            }
        }
    }
}

/// Drift potential `U` of the Fokker-Planck problem.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum DriftPotential {
    /// `x^4 / 4 - 3 x^2 / 2`
    DoubleWell,
    Flat,
}

impl DriftPotential {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            DriftPotential::DoubleWell => double_well(x),
            DriftPotential::Flat => 0.0,
        }
    }
}

/// Which PDE, with its coefficients and boundary data.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum PdeKind {
    /// `u'' = f` on `[0, 1]`.
    Poisson1d { u0: f64, u1: f64 },
    /// `-u'' - omega^2 u = f` on `[0, 1]`.
    Helmholtz1d { omega: f64, u0: f64, u1: f64 },
    /// `Delta u - V u = 0` on the unit square with `u = f` on the boundary.
    Schrodinger2d { potential: SchrodingerPotential },
    /// `u_t - k u_xx = f` on `[0, 1] x [0, 1]`, zero initial and boundary values.
    Heat1d { diffusivity: f64 },
    /// `rho_t = (U' rho + alpha rho_x)_x` on `[a, b] x [0, t_final]` with zero flux.
    FokkerPlanck1d {
        potential: DriftPotential,
        alpha: f64,
        domain: (f64, f64),
        t_final: f64,
    },
}

/// A PDE together with the grids the learned operator sees.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PdeProblem {
    #[cfg_attr(feature = "serde", serde(flatten))]
    pub kind: PdeKind,
    /// Points per spatial axis (interior points per axis for the Schrodinger problem).
    pub resolution: usize,
    /// Time levels for the heat and Fokker-Planck problems; ignored otherwise.
    #[cfg_attr(feature = "serde", serde(default))]
    pub time_points: usize,
    /// Solver refinement over the model grid for the time-dependent problems.
    #[cfg_attr(feature = "serde", serde(default = "default_refine"))]
    pub refine: usize,
}

#[cfg(feature = "serde")]
fn default_refine() -> usize {
    4
}

impl PdeProblem {
    pub fn new(kind: PdeKind, resolution: usize, time_points: usize) -> PdeProblem {
        PdeProblem {
            kind,
            resolution,
            time_points,
            refine: 4,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            PdeKind::Poisson1d { .. } => "poisson1d",
            PdeKind::Helmholtz1d { .. } => "helmholtz1d",
            PdeKind::Schrodinger2d { .. } => "schrodinger2d",
            PdeKind::Heat1d { .. } => "heat1d",
            PdeKind::FokkerPlanck1d { .. } => "fokker_planck1d",
        }
    }

    fn validate(&self) -> Result<()> {
        let m = self.resolution;
        let time = matches!(self.kind, PdeKind::Heat1d { .. } | PdeKind::FokkerPlanck1d { .. });
        if m < 3 {
            return Err(invalid("resolution must be at least 3"));
        }
        if time && self.time_points < 2 {
            return Err(invalid("time-dependent problems need at least 2 time points"));
        }
        if time && self.refine < 1 {
            return Err(invalid("refinement factor must be at least 1"));
        }
        if let PdeKind::FokkerPlanck1d {
            alpha, domain, t_final, ..
        } = self.kind
        {
            if !(alpha > 0.0 && t_final > 0.0 && domain.1 > domain.0) {
                return Err(invalid("Fokker-Planck problem needs alpha > 0, t_final > 0 and a < b"));
            }
        }
        Ok(())
    }

    /// Grid of the forcing or boundary data.
    pub fn input_grid(&self) -> Result<Grid> {
        self.validate()?;
        let m = self.resolution;
        match self.kind {
            PdeKind::Poisson1d { .. } | PdeKind::Helmholtz1d { .. } => Grid::uniform((0.0, 1.0), m),
            PdeKind::Schrodinger2d { .. } => schrodinger_boundary_grid(m),
            PdeKind::Heat1d { .. } => self.output_grid(),
            PdeKind::FokkerPlanck1d { domain, .. } => Grid::uniform(domain, m),
        }
    }

    /// Grid of the solution.
    pub fn output_grid(&self) -> Result<Grid> {
        self.validate()?;
        let m = self.resolution;
        match self.kind {
            PdeKind::Poisson1d { .. } | PdeKind::Helmholtz1d { .. } => Grid::uniform((0.0, 1.0), m),
            PdeKind::Schrodinger2d { .. } => schrodinger_interior_grid(m),
            PdeKind::Heat1d { .. } => Grid::tensor(&[
                Grid::uniform((0.0, 1.0), m)?,
                Grid::uniform((0.0, 1.0), self.time_points)?,
            ]),
            PdeKind::FokkerPlanck1d { domain, t_final, .. } => Grid::tensor(&[
                Grid::uniform(domain, m)?,
                Grid::uniform((0.0, t_final), self.time_points)?,
            ]),
        }
    }
}

/// Distribution of the random inputs.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "type", rename_all = "snake_case"))]
pub enum SamplerSpec {
    /// Truncated sine expansion of a Brownian bridge, times `scale`, plus a
    /// Gaussian constant offset with standard deviation `offset_sigma`.
    ///
    /// On the flattened boundary of the square the bridge runs once around the loop.
    BrownianBridge {
        modes: usize,
        scale: f64,
        #[cfg_attr(feature = "serde", serde(default))]
        offset_sigma: f64,
    },
    /// Gaussian process with exponential covariance of the given length scale.
    KlExponential { modes: usize, length: f64 },
    /// `exp(g) / int exp(g)` for `g` drawn from `KlExponential`; used for densities.
    KlDensity { modes: usize, length: f64 },
    /// The zero function.
    Zero,
}

enum Sampler {
    Bridge(BridgeSampler),
    Kl(KlSampler),
    Density(KlSampler),
    Zero,
}

impl Sampler {
    fn new(spec: &SamplerSpec, grid: &Arc<Grid>) -> Result<Sampler> {
        Ok(match *spec {
            SamplerSpec::BrownianBridge {
                modes,
                scale,
                offset_sigma,
            } => {
                if grid.dims() != 1 {
                    return Err(invalid("brownian bridge inputs need a one-dimensional input grid"));
                }
                let ax = &grid.axes()[0];
                let len = ax.bounds.1 - ax.bounds.0;
                // Run the bridge on the unit interval at the same relative positions.
                let unit = Axis {
                    bounds: (0.0, 1.0),
                    coords: ax.coords.iter().map(|c| (c - ax.bounds.0) / len).collect(),
                    weights: ax.weights.iter().map(|w| w / len).collect(),
                };
                Sampler::Bridge(BridgeSampler::new(
                    Arc::new(Grid::from_axes(vec![unit])),
                    modes,
                    1.0,
                    scale,
                    offset_sigma,
                )?)
            }
            SamplerSpec::KlExponential { modes, length } => Sampler::Kl(KlSampler::new(grid.clone(), modes, length)?),
            SamplerSpec::KlDensity { modes, length } => Sampler::Density(KlSampler::new(grid.clone(), modes, length)?),
            SamplerSpec::Zero => Sampler::Zero,
        })
    }

    fn sample(&self, grid: &Arc<Grid>, rng: &mut RngState) -> Result<FunctionSample> {
        let values = match self {
            Sampler::Bridge(s) => s.sample(rng).values,
            Sampler::Kl(s) => s.sample(rng).values,
            Sampler::Density(s) => {
                let g = s.sample(rng).values;
                let e: Vec<f64> = g.iter().map(|v| libm::exp(*v)).collect();
                let mass = grid.integrate(&e);
                e.iter().map(|v| v / mass).collect()
            }
            Sampler::Zero => vec![0.0; grid.len()],
        };
        FunctionSample::new(grid.clone(), values)
    }
}

/// Linear interpolation matrix from `coarse` node values to `fine` coordinates.
fn interpolation_matrix(coarse: &Axis, fine: &Axis) -> DMatrix<f64> {
    let c = &coarse.coords;
    let mut mat = DMatrix::zeros(fine.len(), c.len());
    for (i, &x) in fine.coords.iter().enumerate() {
        let j = match c.iter().position(|&v| v > x) {
            None => c.len() - 1,
            Some(0) => 1,
            Some(j) => j,
        };
        let t = ((x - c[j - 1]) / (c[j] - c[j - 1])).clamp(0.0, 1.0);
        mat[(i, j - 1)] += 1.0 - t;
        mat[(i, j)] += t;
    }
    mat
}

fn prolong(values: &[f64], coarse: &Grid, fine: &Grid) -> Vec<f64> {
    let mut shape = coarse.shape();
    let mut out = values.to_vec();
    for (d, (ca, fa)) in coarse.axes().iter().zip(fine.axes()).enumerate() {
        out = mode_product(&out, &shape, d, &interpolation_matrix(ca, fa));
        shape[d] = fa.len();
    }
    out
}

/// Pick the fine-grid node nearest to every coarse-grid node.
fn restrict(values: &[f64], fine: &Grid, coarse: &Grid) -> Vec<f64> {
    let picks: Vec<Vec<usize>> = coarse
        .axes()
        .iter()
        .zip(fine.axes())
        .map(|(ca, fa)| {
            ca.coords
                .iter()
                .map(|&x| {
                    let mut best = 0;
                    for (k, &y) in fa.coords.iter().enumerate() {
                        if (y - x).abs() < (fa.coords[best] - x).abs() {
                            best = k;
                        }
                    }
                    best
                })
                .collect()
        })
        .collect();
    let fshape = fine.shape();
    let mut idx = vec![0usize; picks.len()];
    let mut out = Vec::with_capacity(coarse.len());
    for i in 0..coarse.len() {
        crate::tensor::unravel(i, &coarse.shape(), &mut idx);
        let mut flat = 0;
        for (d, &k) in idx.iter().enumerate() {
            flat = flat * fshape[d] + picks[d][k];
        }
        out.push(values[flat]);
    }
    out
}

fn refine_grid(g: &Grid, r: usize) -> Result<Grid> {
    let axes: Result<Vec<Grid>> = g
        .axes()
        .iter()
        .map(|a| Grid::uniform(a.bounds, (a.len() - 1) * r + 1))
        .collect();
    Grid::tensor(&axes?)
}

/// A problem with grids and factorizations prepared once for many solves.
struct Prepared {
    problem: PdeProblem,
    input: Arc<Grid>,
    output: Arc<Grid>,
    schrodinger: Option<SchrodingerSolver>,
    fine: Option<(Arc<Grid>, Arc<Grid>)>,
}

impl Prepared {
    fn new(problem: &PdeProblem) -> Result<Prepared> {
        let input = Arc::new(problem.input_grid()?);
        let output = Arc::new(problem.output_grid()?);
        let mut schrodinger = None;
        let mut fine = None;
        match problem.kind {
            PdeKind::Schrodinger2d { potential } => {
                let v = output.map(|p| potential.value(p[0], p[1]));
                schrodinger = Some(SchrodingerSolver::new(problem.resolution, &v)?);
            }
            PdeKind::Heat1d { .. } | PdeKind::FokkerPlanck1d { .. } => {
                fine = Some((
                    Arc::new(refine_grid(&input, problem.refine)?),
                    Arc::new(refine_grid(&output, problem.refine)?),
                ));
            }
            _ => {}
        }
        Ok(Prepared {
            problem: problem.clone(),
            input,
            output,
            schrodinger,
            fine,
        })
    }

    fn solve(&self, f: &FunctionSample) -> Result<FunctionSample> {
        match self.problem.kind {
            PdeKind::Poisson1d { u0, u1 } => solve_poisson_1d(f, u0, u1),
            PdeKind::Helmholtz1d { omega, u0, u1 } => solve_helmholtz_1d(f, omega, u0, u1),
            PdeKind::Schrodinger2d { .. } => self.schrodinger.as_ref().ok_or_else(missing)?.solve(f),
            PdeKind::Heat1d { diffusivity } => {
                let (fin, fout) = self.fine.as_ref().ok_or_else(missing)?;
                let ff = FunctionSample::new(fin.clone(), prolong(&f.values, &self.input, fin))?;
                let u = solve_heat_1d(&ff, diffusivity)?;
                FunctionSample::new(self.output.clone(), restrict(&u.values, fout, &self.output))
            }
            PdeKind::FokkerPlanck1d { potential, alpha, .. } => {
                let (fin, fout) = self.fine.as_ref().ok_or_else(missing)?;
                let rho0 = FunctionSample::new(fin.clone(), prolong(&f.values, &self.input, fin))?;
                let rho = solve_fokker_planck_1d(&rho0, &|x| potential.value(x), alpha, fout.clone())?;
                FunctionSample::new(self.output.clone(), restrict(&rho.values, fout, &self.output))
            }
        }
    }
}

fn missing() -> Error {
    Error::Internal(String::from("solver was not prepared for this problem"))
}

/// Solve one instance of `problem` for the input `f` given on its input grid.
pub fn solve_problem(problem: &PdeProblem, f: &FunctionSample) -> Result<FunctionSample> {
    let prep = Prepared::new(problem)?;
    if f.values.len() != prep.input.len() {
        return Err(invalid("input does not live on the problem's input grid"));
    }
    prep.solve(&FunctionSample::new(prep.input.clone(), f.values.clone())?)
}

/// Paired input and output samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x_grid: Arc<Grid>,
    pub y_grid: Arc<Grid>,
    pub inputs: Vec<FunctionSample>,
    pub outputs: Vec<FunctionSample>,
    pub seed: u64,
}

impl Dataset {
    /// Check lengths and grids.
    pub fn new(
        x_grid: Arc<Grid>,
        y_grid: Arc<Grid>,
        inputs: Vec<FunctionSample>,
        outputs: Vec<FunctionSample>,
        seed: u64,
    ) -> Result<Dataset> {
        if inputs.len() != outputs.len() {
            return Err(invalid(format!(
                "{} inputs but {} outputs",
                inputs.len(),
                outputs.len()
            )));
        }
        if inputs.iter().any(|s| *s.grid != *x_grid) || outputs.iter().any(|s| *s.grid != *y_grid) {
            return Err(invalid("all samples of a dataset must share its grids"));
        }
        Ok(Dataset {
            x_grid,
            y_grid,
            inputs,
            outputs,
            seed,
        })
    }

    /// Build from `n x m` row-major matrices, one sample per row.
    pub fn from_rows(
        x_grid: Arc<Grid>,
        y_grid: Arc<Grid>,
        inputs: &[Vec<f64>],
        outputs: &[Vec<f64>],
        seed: u64,
    ) -> Result<Dataset> {
        let wrap = |g: &Arc<Grid>, rows: &[Vec<f64>]| -> Result<Vec<FunctionSample>> {
            rows.iter().map(|r| FunctionSample::new(g.clone(), r.clone())).collect()
        };
        Dataset::new(x_grid.clone(), y_grid.clone(), wrap(&x_grid, inputs)?, wrap(&y_grid, outputs)?, seed)
    }

    pub fn n(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// `n x m_x` matrix of inputs.
    pub fn input_matrix(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.inputs, self.x_grid.len())
    }

    /// `n x m_y` matrix of outputs.
    pub fn output_matrix(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.outputs, self.y_grid.len())
    }

    /// First `k` samples and the rest.
    pub fn split_at(&self, k: usize) -> (Dataset, Dataset) {
        let k = k.min(self.n());
        let part = |r: core::ops::Range<usize>| Dataset {
            x_grid: self.x_grid.clone(),
            y_grid: self.y_grid.clone(),
            inputs: self.inputs[r.clone()].to_vec(),
            outputs: self.outputs[r].to_vec(),
            seed: self.seed,
        };
        (part(0..k), part(k..self.n()))
    }
}

fn rows_to_matrix(rows: &[FunctionSample], m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m, |i, j| rows[i].values[j])
}

/// Draw `n` inputs, solve each, and add output noise of relative level `noise`.
///
/// Sample `i` uses stream `i` of `rng`'s seed, so the result does not depend on
/// the order in which samples are solved.
pub fn make_dataset(
    problem: &PdeProblem,
    sampler: &SamplerSpec,
    n: usize,
    noise: f64,
    rng: &RngState,
) -> Result<Dataset> {
    if n == 0 {
        return Err(invalid("dataset needs at least one sample"));
    }
    if !(noise >= 0.0) {
        return Err(invalid("noise level must be nonnegative"));
    }
    let prep = Prepared::new(problem)?;
    let draw = Sampler::new(sampler, &prep.input)?;
    let seed = rng.seed();
    let one = |i: usize| -> Result<(FunctionSample, FunctionSample)> {
        let wrap = |e: Error| Error::Sample {
            index: i,
            source: alloc::boxed::Box::new(e),
        };
        let mut r = RngState::stream(seed, i as u64);
        let f = draw.sample(&prep.input, &mut r).map_err(wrap)?;
        let u = prep.solve(&f).map_err(wrap)?;
        let u = add_noise(&u, noise, &mut r).map_err(wrap)?;
        Ok((f, u))
    };
    #[cfg(feature = "std")]
    let pairs: Result<Vec<_>> = {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(one).collect()
    };
    #[cfg(not(feature = "std"))]
    let pairs: Result<Vec<_>> = (0..n).map(one).collect();
    let (inputs, outputs) = pairs?.into_iter().unzip();
    Dataset::new(prep.input.clone(), prep.output.clone(), inputs, outputs, seed)
}
