//! The kernel-parametrized Green's function and bias model.
//!
//! On training grids `{x_s}` and `{y_t}` with weights `dx`, `dy` the model is
//!
//! ```text
//! G[s,t]  = sum_k d_k E_k(x_s, y_t) + sum_{sigma,tau} K(x_s, y_t, x_sigma, y_tau) W[sigma,tau] dx_sigma dy_tau
//! beta[t] = sum_k q_k e_k(y_t)      + sum_tau Q(y_t, y_tau) w[tau] dy_tau
//! u[t]    = beta[t] + sum_s G[s,t] f(x_s) dx_s
//! ```
//!
//! Evaluating the same sums at other points of the domain gives the model on a
//! new mesh; the contracted weights always stay those of the training grids.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::grid::Grid;
use crate::kernels::{KernelOperator, KernelSpec};
use crate::stochastic::FunctionSample;

/// Monomials `prod_a p_a^{e_a}` spanning a finite-dimensional null space.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NullBasis {
    pub exponents: Vec<Vec<u32>>,
}

impl NullBasis {
    pub fn empty() -> NullBasis {
        NullBasis::default()
    }

    /// `{1, y, ..., y^{count-1}}` on a one-dimensional domain.
    pub fn monomials_1d(count: usize) -> NullBasis {
        NullBasis {
            exponents: (0..count as u32).map(|e| vec![e]).collect(),
        }
    }

    /// All monomials of total degree below `degree` in `dims` variables.
    pub fn total_degree(dims: usize, degree: u32) -> NullBasis {
        let mut exponents = Vec::new();
        let mut e = vec![0u32; dims];
        loop {
            if e.iter().sum::<u32>() < degree {
                exponents.push(e.clone());
            }
            let mut a = 0;
            loop {
                if a == dims {
                    exponents.sort_by_key(|v| v.iter().sum::<u32>());
                    return NullBasis { exponents };
                }
                e[a] += 1;
                if e[a] < degree {
                    break;
                }
                e[a] = 0;
                a += 1;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn eval(&self, k: usize, p: &[f64]) -> f64 {
        self.exponents[k].iter().zip(p).map(|(&e, &x)| libm::pow(x, e as f64)).product()
    }

    /// Basis functions evaluated on every point of `grid`.
    pub(crate) fn on_grid(&self, grid: &Grid) -> Result<Vec<Vec<f64>>> {
        if let Some(e) = self.exponents.iter().find(|e| e.len() != grid.dims()) {
            return Err(invalid(format!(
                "null-space monomial has {} exponents for a {}-dimensional domain",
                e.len(),
                grid.dims()
            )));
        }
        Ok((0..self.len()).map(|k| grid.map(|p| self.eval(k, p))).collect())
    }
}

/// Trainable Green's function and bias on fixed training grids.
#[derive(Debug, Clone)]
pub struct GreensModel {
    kernel_g: KernelSpec,
    kernel_b: Option<KernelSpec>,
    null_g: NullBasis,
    null_b: NullBasis,
    x_grid: Arc<Grid>,
    y_grid: Arc<Grid>,
    xy_grid: Grid,
    /// Weight field on the training product grid, row-major `m_x x m_y`.
    pub w_g: Vec<f64>,
    pub w_b: Vec<f64>,
    pub d: Vec<f64>,
    pub q: Vec<f64>,
    pub lambda: f64,
    pub rho: f64,
    op_g: KernelOperator,
    op_b: Option<KernelOperator>,
    e_g: Vec<Vec<f64>>,
    e_b: Vec<Vec<f64>>,
}

/// Parameter blocks, laid out like the model's fields.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Params {
    pub w_g: Vec<f64>,
    pub w_b: Vec<f64>,
    pub d: Vec<f64>,
    pub q: Vec<f64>,
}

impl Params {
    pub fn norm_inf(&self) -> f64 {
        self.w_g
            .iter()
            .chain(&self.w_b)
            .chain(&self.d)
            .chain(&self.q)
            .fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(
            self.w_g
                .iter()
                .chain(&self.w_b)
                .chain(&self.d)
                .chain(&self.q)
                .map(|v| v * v)
                .sum(),
        )
    }

    pub(crate) fn blocks_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w_g, &mut self.w_b, &mut self.d, &mut self.q]
    }
}

impl GreensModel {
    /// Zero-initialized model. Bias terms are enabled iff `kernel_b` is given.
    pub fn new(
        kernel_g: KernelSpec,
        kernel_b: Option<KernelSpec>,
        x_grid: Arc<Grid>,
        y_grid: Arc<Grid>,
        lambda: f64,
        rho: f64,
    ) -> Result<GreensModel> {
        let null_b = NullBasis::empty();
        GreensModel::with_null_spaces(kernel_g, kernel_b, NullBasis::empty(), null_b, x_grid, y_grid, lambda, rho)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_null_spaces(
        kernel_g: KernelSpec,
        kernel_b: Option<KernelSpec>,
        null_g: NullBasis,
        null_b: NullBasis,
        x_grid: Arc<Grid>,
        y_grid: Arc<Grid>,
        lambda: f64,
        rho: f64,
    ) -> Result<GreensModel> {
        if !(lambda >= 0.0) || !(rho >= 0.0) {
            return Err(invalid("penalty weights lambda and rho must be nonnegative"));
        }
        if kernel_g.arity() != x_grid.dims() + y_grid.dims() {
            return Err(invalid(format!(
                "Green's kernel arity {} must equal input dims {} plus output dims {}",
                kernel_g.arity(),
                x_grid.dims(),
                y_grid.dims()
            )));
        }
        if kernel_b.is_none() && !null_b.is_empty() {
            return Err(invalid("a bias null space needs the bias to be enabled"));
        }
        let xy_grid = Grid::product(&x_grid, &y_grid);
        let op_g = KernelOperator::between(&kernel_g, &xy_grid, &xy_grid)?;
        let op_b = match &kernel_b {
            Some(k) => {
                if k.arity() != y_grid.dims() {
                    return Err(invalid("bias kernel arity must equal the output dimension"));
                }
                Some(KernelOperator::between(k, &y_grid, &y_grid)?)
            }
            None => None,
        };
        let e_g = null_g.on_grid(&xy_grid)?;
        let e_b = null_b.on_grid(&y_grid)?;
        Ok(GreensModel {
            w_g: vec![0.0; xy_grid.len()],
            w_b: if kernel_b.is_some() { vec![0.0; y_grid.len()] } else { Vec::new() },
            d: vec![0.0; null_g.len()],
            q: vec![0.0; null_b.len()],
            kernel_g,
            kernel_b,
            null_g,
            null_b,
            x_grid,
            y_grid,
            xy_grid,
            lambda,
            rho,
            op_g,
            op_b,
            e_g,
            e_b,
        })
    }

    pub fn kernel_g(&self) -> &KernelSpec {
        &self.kernel_g
    }

    pub fn kernel_b(&self) -> Option<&KernelSpec> {
        self.kernel_b.as_ref()
    }

    pub fn null_g(&self) -> &NullBasis {
        &self.null_g
    }

    pub fn null_b(&self) -> &NullBasis {
        &self.null_b
    }

    pub fn bias_enabled(&self) -> bool {
        self.kernel_b.is_some()
    }

    pub fn x_grid(&self) -> &Arc<Grid> {
        &self.x_grid
    }

    pub fn y_grid(&self) -> &Arc<Grid> {
        &self.y_grid
    }

    pub fn params(&self) -> Params {
        Params {
            w_g: self.w_g.clone(),
            w_b: self.w_b.clone(),
            d: self.d.clone(),
            q: self.q.clone(),
        }
    }

    pub fn set_params(&mut self, p: Params) -> Result<()> {
        if p.w_g.len() != self.w_g.len()
            || p.w_b.len() != self.w_b.len()
            || p.d.len() != self.d.len()
            || p.q.len() != self.q.len()
        {
            return Err(invalid("parameter shapes do not match the model"));
        }
        self.w_g = p.w_g;
        self.w_b = p.w_b;
        self.d = p.d;
        self.q = p.q;
        Ok(())
    }

    /// `W (.) (dx dy)` on the training product grid.
    pub(crate) fn weighted_w_g(&self) -> Vec<f64> {
        self.w_g.iter().zip(self.xy_grid.weights()).map(|(w, c)| w * c).collect()
    }

    pub(crate) fn weighted_w_b(&self) -> Vec<f64> {
        self.w_b.iter().zip(self.y_grid.weights()).map(|(w, c)| w * c).collect()
    }

    pub(crate) fn op_g(&self) -> &KernelOperator {
        &self.op_g
    }

    pub(crate) fn op_b(&self) -> Option<&KernelOperator> {
        self.op_b.as_ref()
    }

    pub(crate) fn e_g(&self) -> &[Vec<f64>] {
        &self.e_g
    }

    pub(crate) fn e_b(&self) -> &[Vec<f64>] {
        &self.e_b
    }

    pub(crate) fn xy_weights(&self) -> &[f64] {
        self.xy_grid.weights()
    }

    /// Kernel part `K W~` and the full Green's function on the training grids (flat).
    pub(crate) fn greens_parts(&self) -> (Vec<f64>, Vec<f64>) {
        let rk = self.op_g.apply(&self.weighted_w_g());
        let mut full = rk.clone();
        add_null(&mut full, &self.d, &self.e_g);
        (rk, full)
    }

    /// Kernel part `Q w~` and the full bias on the training output grid.
    pub(crate) fn bias_parts(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.op_b {
            Some(op) => {
                let rk = op.apply(&self.weighted_w_b());
                let mut full = rk.clone();
                add_null(&mut full, &self.q, &self.e_b);
                (rk, full)
            }
            None => (Vec::new(), vec![0.0; self.y_grid.len()]),
        }
    }

    /// `G` on target grids as an `m_x x m_y` matrix.
    pub fn assemble_greens(&self, target_x: &Grid, target_y: &Grid) -> Result<DMatrix<f64>> {
        let flat = self.greens_flat(target_x, target_y)?;
        Ok(DMatrix::from_row_slice(target_x.len(), target_y.len(), &flat))
    }

    fn greens_flat(&self, target_x: &Grid, target_y: &Grid) -> Result<Vec<f64>> {
        if !target_x.same_domain(&self.x_grid) || !target_y.same_domain(&self.y_grid) {
            return Err(invalid("target grids must cover the training domain"));
        }
        if target_x == &*self.x_grid && target_y == &*self.y_grid {
            return Ok(self.greens_parts().1);
        }
        let target = Grid::product(target_x, target_y);
        let op = KernelOperator::between(&self.kernel_g, &target, &self.xy_grid)?;
        let mut g = op.apply(&self.weighted_w_g());
        add_null(&mut g, &self.d, &self.null_g.on_grid(&target)?);
        Ok(g)
    }

    /// `beta` on a target output grid.
    pub fn assemble_bias(&self, target_y: &Grid) -> Result<Vec<f64>> {
        let Some(kernel_b) = &self.kernel_b else {
            return Err(Error::InvalidState("the model has no bias term".into()));
        };
        if !target_y.same_domain(&self.y_grid) {
            return Err(invalid("target grid must cover the training output domain"));
        }
        if target_y == &*self.y_grid {
            return Ok(self.bias_parts().1);
        }
        let op = KernelOperator::between(kernel_b, target_y, &self.y_grid)?;
        let mut b = op.apply(&self.weighted_w_b());
        add_null(&mut b, &self.q, &self.null_b.on_grid(target_y)?);
        Ok(b)
    }

    /// Freeze the model on target grids for evaluation.
    pub fn assemble(&self, target_x: Arc<Grid>, target_y: Arc<Grid>) -> Result<AssembledModel> {
        let g = self.greens_flat(&target_x, &target_y)?;
        let beta = if self.bias_enabled() {
            self.assemble_bias(&target_y)?
        } else {
            vec![0.0; target_y.len()]
        };
        Ok(AssembledModel {
            g: DMatrix::from_row_slice(target_x.len(), target_y.len(), &g),
            beta,
            x_grid: target_x,
            y_grid: target_y,
        })
    }

    /// Model on its own training grids.
    pub fn assemble_training(&self) -> AssembledModel {
        let (_, g) = self.greens_parts();
        let (_, beta) = self.bias_parts();
        AssembledModel {
            g: DMatrix::from_row_slice(self.x_grid.len(), self.y_grid.len(), &g),
            beta,
            x_grid: self.x_grid.clone(),
            y_grid: self.y_grid.clone(),
        }
    }

    /// Prediction for one input on the training grids.
    pub fn forward(&self, f: &FunctionSample) -> Result<FunctionSample> {
        self.assemble_training().forward(f)
    }

    /// `lambda <W~, K W~> + rho <w~, Q w~>`; null-space coefficients are free.
    pub fn penalty(&self) -> f64 {
        let (rk_g, _) = self.greens_parts();
        let (rk_b, _) = self.bias_parts();
        self.penalty_from_parts(&rk_g, &rk_b)
    }

    pub(crate) fn penalty_from_parts(&self, rk_g: &[f64], rk_b: &[f64]) -> f64 {
        let mut p = 0.0;
        if self.lambda > 0.0 {
            p += self.lambda * dot(&self.weighted_w_g(), rk_g);
        }
        if self.rho > 0.0 && !rk_b.is_empty() {
            p += self.rho * dot(&self.weighted_w_b(), rk_b);
        }
        p
    }
}

/// Green's function and bias evaluated on fixed grids.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledModel {
    /// `m_x x m_y`.
    pub g: DMatrix<f64>,
    pub beta: Vec<f64>,
    pub x_grid: Arc<Grid>,
    pub y_grid: Arc<Grid>,
}

impl AssembledModel {
    pub fn forward(&self, f: &FunctionSample) -> Result<FunctionSample> {
        if f.grid.as_ref() != self.x_grid.as_ref() {
            return Err(invalid("input sample is not on the model's input grid"));
        }
        let fx = nalgebra::DVector::from_iterator(
            f.values.len(),
            f.values.iter().zip(self.x_grid.weights()).map(|(v, w)| v * w),
        );
        let u = self.g.tr_mul(&fx);
        Ok(FunctionSample {
            grid: self.y_grid.clone(),
            values: u.iter().zip(&self.beta).map(|(a, b)| a + b).collect(),
        })
    }

    /// Predictions for the rows of `inputs` (`n x m_x`), returned as `n x m_y`.
    pub fn forward_matrix(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if inputs.ncols() != self.x_grid.len() {
            return Err(invalid("input matrix width does not match the input grid"));
        }
        let mut fx = inputs.clone();
        for (j, &w) in self.x_grid.weights().iter().enumerate() {
            fx.column_mut(j).scale_mut(w);
        }
        let mut p = fx * &self.g;
        for (j, &b) in self.beta.iter().enumerate() {
            p.column_mut(j).add_scalar_mut(b);
        }
        Ok(p)
    }
}

fn add_null(out: &mut [f64], coef: &[f64], basis: &[Vec<f64>]) {
    for (c, e) in coef.iter().zip(basis) {
        if *c != 0.0 {
            for (o, v) in out.iter_mut().zip(e) {
                *o += c * v;
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{gram_cross, symmetrize, causal_mask, Direction};
    use crate::pde::{analytic_green, solve_poisson_1d, GreenKind};
    use crate::stochastic::{sample_brownian_bridge, RngState};

    fn grid(m: usize) -> Arc<Grid> {
        Arc::new(Grid::uniform((0.0, 1.0), m).unwrap())
    }

    fn model(bias: bool) -> GreensModel {
        GreensModel::with_null_spaces(
            KernelSpec::gaussian(&[0.05, 0.05]),
            bias.then(|| KernelSpec::gaussian(&[0.05])),
            NullBasis::empty(),
            if bias { NullBasis::monomials_1d(1) } else { NullBasis::empty() },
            grid(8),
            grid(6),
            1e-3,
            1e-3,
        )
        .unwrap()
    }

    #[test]
    fn zero_model_assembles_zero() {
        let m = model(true);
        let g = m.assemble_greens(&grid(8), &grid(6)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(m.assemble_bias(&grid(6)).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(m.penalty(), 0.0);
    }

    #[test]
    fn training_grid_assembly_is_exact() {
        let mut m = model(true);
        for (i, w) in m.w_g.iter_mut().enumerate() {
            *w = libm::sin(i as f64);
        }
        let fine_x = Grid::uniform((0.0, 1.0), 8).unwrap();
        let fine_y = Grid::uniform((0.0, 1.0), 6).unwrap();
        let a = m.assemble_greens(&fine_x, &fine_y).unwrap();
        let b = m.assemble_training().g;
        assert_eq!(a, b);
    }

    #[test]
    fn single_weight_contraction() {
        let mut m = model(false);
        let (sigma, tau) = (3, 2);
        m.w_g[sigma * 6 + tau] = 1.0;
        let tx = Grid::uniform((0.0, 1.0), 11).unwrap();
        let ty = Grid::uniform((0.0, 1.0), 9).unwrap();
        let g = m.assemble_greens(&tx, &ty).unwrap();
        let xi = m.x_grid.point(sigma)[0];
        let eta = m.y_grid.point(tau)[0];
        let w = m.x_grid.weights()[sigma] * m.y_grid.weights()[tau];
        let target = Grid::product(&tx, &ty);
        let rows: Vec<&[f64]> = target.points().collect();
        let col = [xi, eta];
        let k = gram_cross(&m.kernel_g, &rows, &[&col[..]]).unwrap();
        for s in 0..11 {
            for t in 0..9 {
                assert!((g[(s, t)] - k[(s * 9 + t, 0)] * w).abs() < 1e-14 * k.amax());
            }
        }
    }

    #[test]
    fn bias_examples() {
        let mut m = model(true);
        m.q[0] = 1.0;
        assert!(m.assemble_bias(&grid(6)).unwrap().iter().all(|&v| v == 1.0));
        m.q[0] = 0.0;
        m.w_b[4] = 1.0;
        let b = m.assemble_bias(&grid(6)).unwrap();
        let pts: Vec<&[f64]> = m.y_grid.points().collect();
        let k = gram_cross(m.kernel_b().unwrap(), &pts, &pts).unwrap();
        for t in 0..6 {
            assert!((b[t] - k[(t, 4)] * m.y_grid.weights()[4]).abs() < 1e-14);
        }
        assert!(matches!(model(false).assemble_bias(&grid(6)), Err(Error::InvalidState(_))));
    }

    #[test]
    fn forward_is_affine() {
        let mut m = model(true);
        for (i, w) in m.w_g.iter_mut().enumerate() {
            *w = libm::cos(0.3 * i as f64);
        }
        m.w_b[2] = 2.0;
        m.q[0] = -0.5;
        let x = m.x_grid.clone();
        let f1 = FunctionSample::new(x.clone(), x.map(|p| p[0] * p[0])).unwrap();
        let f2 = FunctionSample::new(x.clone(), x.map(|p| libm::sin(5.0 * p[0]))).unwrap();
        let sum = FunctionSample::new(x.clone(), f1.values.iter().zip(&f2.values).map(|(a, b)| a + b).collect()).unwrap();
        let zero = m.forward(&FunctionSample::zeros(x)).unwrap();
        let beta = m.assemble_bias(&m.y_grid.clone()).unwrap();
        assert_eq!(zero.values, beta);
        let a = m.forward(&f1).unwrap();
        let b = m.forward(&f2).unwrap();
        let c = m.forward(&sum).unwrap();
        for t in 0..6 {
            let lhs = c.values[t] - zero.values[t];
            let rhs = (a.values[t] - zero.values[t]) + (b.values[t] - zero.values[t]);
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_rejects_wrong_grid() {
        let m = model(false);
        assert!(m.forward(&FunctionSample::zeros(grid(9))).is_err());
        assert!(m.assemble_greens(&Grid::uniform((0.0, 2.0), 8).unwrap(), &grid(6)).is_err());
    }

    #[test]
    fn analytic_green_reproduces_poisson_solves() {
        let m = 200;
        let g = grid(m);
        let pts: Vec<f64> = g.points().map(|p| p[0]).collect();
        let mut gm = DMatrix::zeros(m, m);
        for s in 0..m {
            for t in 0..m {
                gm[(s, t)] = analytic_green(GreenKind::Poisson1d, &[pts[s]], &[pts[t]]).unwrap();
            }
        }
        let beta: Vec<f64> = pts.iter().map(|y| 5.0 - 10.0 * y).collect();
        let assembled = AssembledModel {
            g: gm,
            beta,
            x_grid: g.clone(),
            y_grid: g.clone(),
        };
        let mut rng = RngState::new(2);
        let f = sample_brownian_bridge(g.clone(), 100, 1.0, 100.0, 0.0, &mut rng).unwrap();
        let u = solve_poisson_1d(&f, 5.0, -5.0).unwrap();
        let p = assembled.forward(&f).unwrap();
        let scale = u.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let err = p.values.iter().zip(&u.values).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        // rectangle-rule quadrature error O(dx) relative to the solution scale
        assert!(err < 5.0 / m as f64 * scale, "{err} vs {scale}");
    }

    #[test]
    fn penalty_is_quadratic() {
        let mut m = model(false);
        for (i, w) in m.w_g.iter_mut().enumerate() {
            *w = libm::sin(1.7 * i as f64);
        }
        let p1 = m.penalty();
        assert!(p1 > 0.0);
        for w in m.w_g.iter_mut() {
            *w *= 2.0;
        }
        assert!((m.penalty() - 4.0 * p1).abs() < 1e-12 * p1);
        m.lambda = 0.0;
        assert_eq!(m.penalty(), 0.0);
    }

    #[test]
    fn penalty_matches_dense_quadratic_form() {
        let mut m = model(true);
        for (i, w) in m.w_g.iter_mut().enumerate() {
            *w = libm::sin(0.9 * i as f64);
        }
        m.w_b[1] = 1.5;
        m.d.clear();
        let pts: Vec<&[f64]> = m.xy_grid.points().collect();
        let kg = gram_cross(&m.kernel_g, &pts, &pts).unwrap();
        let v = nalgebra::DVector::from_vec(m.w_g.clone());
        // uniform weights, so (dx dy)^2 factors out
        let c = m.xy_grid.weights()[0];
        let g_term = m.lambda * c * c * (v.transpose() * &kg * &v)[(0, 0)];
        let ypts: Vec<&[f64]> = m.y_grid.points().collect();
        let kb = gram_cross(m.kernel_b().unwrap(), &ypts, &ypts).unwrap();
        let cb = m.y_grid.weights()[1];
        let b_term = m.rho * cb * cb * 1.5 * 1.5 * kb[(1, 1)];
        assert!((m.penalty() - g_term - b_term).abs() < 1e-12 * (g_term + b_term));
    }

    #[test]
    fn causal_model_is_causal_on_space_time_grids() {
        let x = Arc::new(Grid::tensor(&[Grid::uniform((0.0, 1.0), 5).unwrap(), Grid::uniform((0.0, 1.0), 6).unwrap()]).unwrap());
        let k = symmetrize(&KernelSpec::gaussian(&[0.02, 0.05, 0.02, 0.05]), &[0], &[2]).unwrap();
        let k = symmetrize(&k, &[1], &[3]).unwrap();
        let k = causal_mask(&k, 1, 3, Direction::Causal).unwrap();
        let mut m = GreensModel::new(k, None, x.clone(), x.clone(), 1e-3, 0.0).unwrap();
        for (i, w) in m.w_g.iter_mut().enumerate() {
            *w = 1.0 + libm::sin(i as f64);
        }
        let fine = Arc::new(Grid::tensor(&[Grid::uniform((0.0, 1.0), 7).unwrap(), Grid::uniform((0.0, 1.0), 9).unwrap()]).unwrap());
        for target in [x.clone(), fine] {
            let g = m.assemble_greens(&target, &target).unwrap();
            for s in 0..target.len() {
                for t in 0..target.len() {
                    if target.point(s)[1] > target.point(t)[1] {
                        assert_eq!(g[(s, t)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn symmetric_kernel_gives_symmetric_greens() {
        let x = grid(7);
        let k = symmetrize(&KernelSpec::gaussian(&[0.03, 0.03]), &[0], &[1]).unwrap();
        let mut m = GreensModel::new(k, None, x.clone(), x.clone(), 0.0, 0.0).unwrap();
        for (i, w) in m.w_g.iter_mut().enumerate() {
            *w = libm::sin(2.1 * i as f64);
        }
        let g = m.assemble_training().g;
        assert!((&g - g.transpose()).amax() < 1e-10 * g.amax());
    }

    #[test]
    fn total_degree_basis() {
        let b = NullBasis::total_degree(2, 2);
        assert_eq!(b.len(), 3);
        assert_eq!(b.exponents[0], vec![0, 0]);
        assert_eq!(NullBasis::monomials_1d(3).eval(2, &[2.0]), 4.0);
    }
}
