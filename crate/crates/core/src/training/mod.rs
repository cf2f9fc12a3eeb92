//! Penalized least-squares training: losses, gradients, Adam, and exact solvers.
//!
//! The risk of a model on samples `(F_i, U_i)` is
//!
//! ```text
//! (1/n) sum_i ||U_i - T(F_i)||^2 + lambda <W~, K W~> + rho <w~, Q w~>
//! ```
//!
//! with `W~ = W (.) (dx dy)` and `w~ = w (.) dy`. It is a convex quadratic in all
//! parameter blocks, so both the gradient path and the direct solves below target
//! the same minimum.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::estimator::{dot, GreensModel, NullBasis, Params};
use crate::grid::Grid;
use crate::kernels::{KernelOperator, KernelSpec};
use crate::pde::Dataset;

/// Optimizer settings.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub amsgrad: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            batch_size: 100,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            amsgrad: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 || self.batch_size > n {
            return Err(invalid(format!(
                "batch size {} must lie in 1..={n}",
                self.batch_size
            )));
        }
        let open = |b: f64| b > 0.0 && b < 1.0;
        if !open(self.adam_beta1) || !open(self.adam_beta2) {
            return Err(invalid("Adam betas must lie strictly between 0 and 1"));
        }
        if !(self.learning_rate > 0.0) || !(self.adam_eps > 0.0) {
            return Err(invalid("learning rate and epsilon must be positive"));
        }
        Ok(())
    }
}

/// Per-epoch training-set metrics.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainHistory {
    pub risk: Vec<f64>,
    pub mse: Vec<f64>,
    pub rse: Vec<f64>,
    /// Seconds spent in `train`; zero without the `std` feature.
    pub wall_time: f64,
}

fn check_shapes(preds: &DMatrix<f64>, targets: &DMatrix<f64>, y_grid: &Grid) -> Result<()> {
    if preds.shape() != targets.shape() {
        return Err(invalid("predictions and targets differ in shape"));
    }
    if preds.nrows() == 0 {
        return Err(invalid("metrics need at least one sample"));
    }
    if preds.ncols() != y_grid.len() {
        return Err(invalid("sample width does not match the output grid"));
    }
    Ok(())
}

fn weighted_sq(row: impl Iterator<Item = f64>, w: &[f64]) -> f64 {
    row.zip(w).map(|(v, w)| v * v * w).sum()
}

/// Mean weighted squared L2 error over samples (rows).
pub fn mse(preds: &DMatrix<f64>, targets: &DMatrix<f64>, y_grid: &Grid) -> Result<f64> {
    check_shapes(preds, targets, y_grid)?;
    let w = y_grid.weights();
    let total: f64 = (0..preds.nrows())
        .map(|i| weighted_sq(preds.row(i).iter().zip(targets.row(i).iter()).map(|(p, u)| u - p), w))
        .sum();
    Ok(total / preds.nrows() as f64)
}

/// `||U_i - pred_i||^2 / ||U_i||^2` for each sample.
pub fn rse_per_sample(preds: &DMatrix<f64>, targets: &DMatrix<f64>, y_grid: &Grid) -> Result<Vec<f64>> {
    check_shapes(preds, targets, y_grid)?;
    let w = y_grid.weights();
    (0..preds.nrows())
        .map(|i| {
            let den = weighted_sq(targets.row(i).iter().copied(), w);
            if den == 0.0 {
                return Err(Error::ZeroNorm { index: i });
            }
            let num = weighted_sq(preds.row(i).iter().zip(targets.row(i).iter()).map(|(p, u)| u - p), w);
            Ok(num / den)
        })
        .collect()
}

/// Mean relative squared L2 error.
pub fn rse(preds: &DMatrix<f64>, targets: &DMatrix<f64>, y_grid: &Grid) -> Result<f64> {
    let per = rse_per_sample(preds, targets, y_grid)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

fn check_data(model: &GreensModel, inputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<()> {
    if inputs.nrows() == 0 || inputs.nrows() != targets.nrows() {
        return Err(invalid("need the same nonzero number of inputs and targets"));
    }
    if inputs.ncols() != model.x_grid().len() || targets.ncols() != model.y_grid().len() {
        return Err(invalid("data does not live on the model's training grids"));
    }
    Ok(())
}

/// Data term plus penalty on the given samples.
pub fn penalized_risk(model: &GreensModel, inputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<f64> {
    check_data(model, inputs, targets)?;
    let preds = model.assemble_training().forward_matrix(inputs)?;
    Ok(mse(&preds, targets, model.y_grid())? + model.penalty())
}

/// Exact gradient of `penalized_risk` with respect to every parameter block.
pub fn gradients(model: &GreensModel, inputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<Params> {
    check_data(model, inputs, targets)?;
    let (mx, my) = (model.x_grid().len(), model.y_grid().len());
    let dx = model.x_grid().weights();
    let dy = model.y_grid().weights();
    let b = inputs.nrows() as f64;

    let (rk_g, full_g) = model.greens_parts();
    let (rk_b, beta) = model.bias_parts();
    let g = DMatrix::from_row_slice(mx, my, &full_g);
    let mut ft = inputs.clone();
    for (j, &w) in dx.iter().enumerate() {
        ft.column_mut(j).scale_mut(w);
    }
    // gP = (2/b) (P - U) dy
    let mut gp = &ft * &g - targets;
    for (j, &bj) in beta.iter().enumerate() {
        gp.column_mut(j).add_scalar_mut(bj);
        gp.column_mut(j).scale_mut(2.0 * dy[j] / b);
    }
    let gg = ft.tr_mul(&gp);
    let gg_flat: Vec<f64> = (0..mx).flat_map(|s| (0..my).map(move |t| (s, t))).map(|(s, t)| gg[(s, t)]).collect();
    let gbeta: Vec<f64> = (0..my).map(|t| gp.column(t).sum()).collect();

    let mut gw = model.op_g().adjoint(&gg_flat);
    if model.lambda > 0.0 {
        for (o, r) in gw.iter_mut().zip(&rk_g) {
            *o += 2.0 * model.lambda * r;
        }
    }
    for (o, c) in gw.iter_mut().zip(model.xy_weights()) {
        *o *= c;
    }
    let d: Vec<f64> = model.e_g().iter().map(|e| dot(e, &gg_flat)).collect();

    let (w_b, q) = match model.op_b() {
        Some(op) => {
            let mut g = op.adjoint(&gbeta);
            if model.rho > 0.0 {
                for (o, r) in g.iter_mut().zip(&rk_b) {
                    *o += 2.0 * model.rho * r;
                }
            }
            for (o, w) in g.iter_mut().zip(dy) {
                *o *= w;
            }
            (g, model.e_b().iter().map(|e| dot(e, &gbeta)).collect())
        }
        None => (Vec::new(), Vec::new()),
    };
    Ok(Params { w_g: gw, w_b, d, q })
}

/// Moment estimates of Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    /// Running maximum of `v`, used when `amsgrad` is on.
    pub v_max: Params,
    pub step: u64,
}

fn zeros_like(p: &Params) -> Params {
    Params {
        w_g: vec![0.0; p.w_g.len()],
        w_b: vec![0.0; p.w_b.len()],
        d: vec![0.0; p.d.len()],
        q: vec![0.0; p.q.len()],
    }
}

impl AdamState {
    pub fn new(params: &Params) -> AdamState {
        AdamState {
            m: zeros_like(params),
            v: zeros_like(params),
            v_max: zeros_like(params),
            step: 0,
        }
    }
}

/// One Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut Params, grads: &Params, config: &TrainConfig) -> Result<()> {
    let shape = |p: &Params| (p.w_g.len(), p.w_b.len(), p.d.len(), p.q.len());
    let s = shape(params);
    if shape(grads) != s || shape(&state.m) != s {
        return Err(invalid("optimizer state does not match the parameter shapes"));
    }
    state.step += 1;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - libm::pow(b1, state.step as f64);
    let c2 = 1.0 - libm::pow(b2, state.step as f64);
    let grads = [&grads.w_g, &grads.w_b, &grads.d, &grads.q];
    let m = state.m.blocks_mut();
    let v = state.v.blocks_mut();
    let vm = state.v_max.blocks_mut();
    for ((((p, g), m), v), vm) in params.blocks_mut().into_iter().zip(grads).zip(m).zip(v).zip(vm) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            vm[i] = vm[i].max(v[i]);
            let second = if config.amsgrad { vm[i] } else { v[i] };
            p[i] -= config.learning_rate * (m[i] / c1) / (libm::sqrt(second / c2) + config.adam_eps);
        }
    }
    Ok(())
}

fn rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
}

/// Adam over shuffled minibatches; `ceil(n / batch_size)` steps per epoch.
pub fn train(mut model: GreensModel, data: &Dataset, config: &TrainConfig) -> Result<(GreensModel, TrainHistory)> {
    #[cfg(feature = "std")]
    let start = std::time::Instant::now();
    let n = data.n();
    config.validate(n)?;
    if *data.x_grid != **model.x_grid() || *data.y_grid != **model.y_grid() {
        return Err(invalid("dataset grids differ from the model's training grids"));
    }
    let inputs = data.input_matrix();
    let targets = data.output_matrix();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut params = model.params();
    let mut state = AdamState::new(&params);
    let mut history = TrainHistory::default();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let (bx, bu) = if batch.len() == n {
                (inputs.clone(), targets.clone())
            } else {
                (rows(&inputs, batch), rows(&targets, batch))
            };
            let grads = gradients(&model, &bx, &bu)?;
            adam_step(&mut state, &mut params, &grads, config)?;
            model.set_params(params.clone())?;
        }
        let preds = model.assemble_training().forward_matrix(&inputs)?;
        let m = mse(&preds, &targets, model.y_grid())?;
        history.mse.push(m);
        history.risk.push(m + model.penalty());
        history.rse.push(rse(&preds, &targets, model.y_grid())?);
    }
    #[cfg(feature = "std")]
    {
        history.wall_time = start.elapsed().as_secs_f64();
    }
    Ok((model, history))
}

/// Weights of the representer form `W = sum_i F_i (x) c_i` plus null-space coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolution {
    /// `n x m_y`; row `i` is the discretized `c_i`.
    pub c: DMatrix<f64>,
    pub d: Vec<f64>,
    /// Relative residual of the block system for `c` and `d`.
    pub residual: f64,
}

impl RidgeSolution {
    /// `W[sigma, tau] = sum_i F_i(x_sigma) c_i(y_tau)`, row-major `m_x x m_y`.
    pub fn weight_field(&self, data: &Dataset) -> Vec<f64> {
        let w = data.input_matrix().tr_mul(&self.c);
        let (mx, my) = w.shape();
        (0..mx).flat_map(|s| (0..my).map(move |t| (s, t))).map(|(s, t)| w[(s, t)]).collect()
    }
}

fn lu_solve(a: DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    a.lu()
        .solve(b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular(format!("{what} is singular")))
}

/// Closed-form minimizer of the risk over representer weights `c_i` and `d`.
///
/// Builds the `n m_y` block matrix `M` with blocks
/// `M_ij[t, tau] = sum_{s, sigma} K(x_s, y_t, x_sigma, y_tau) F~_i(s) F~_j(sigma) dy_tau`,
/// solves `(M + n lambda I) c = u - sum_k d_k T^k`, and picks `d` so that the
/// residual is orthogonal to every `T^k`. Dense: intended for `n m_y` up to a few thousand.
pub fn solve_ridge_exact(kernel_g: &KernelSpec, null_g: &NullBasis, data: &Dataset, lambda: f64) -> Result<RidgeSolution> {
    if !(lambda > 0.0) {
        return Err(invalid("the exact ridge solve needs lambda > 0"));
    }
    let (n, mx, my) = (data.n(), data.x_grid.len(), data.y_grid.len());
    let size = n * my;
    if size > 6000 {
        return Err(invalid(format!("ridge system of size {size} is too large for a dense solve")));
    }
    let xy = Grid::product(&data.x_grid, &data.y_grid);
    let op = KernelOperator::between(kernel_g, &xy, &xy)?;
    let dy = data.y_grid.weights();
    let mut ft = data.input_matrix();
    for (j, &w) in data.x_grid.weights().iter().enumerate() {
        ft.column_mut(j).scale_mut(w);
    }
    // contract G[s, t] against every F~_i(s): n x my
    let contract = |g: &[f64]| ft.clone() * DMatrix::from_row_slice(mx, my, g);
    let mut m = DMatrix::zeros(size, size);
    let mut w = vec![0.0; mx * my];
    for j in 0..n {
        for tau in 0..my {
            w.iter_mut().for_each(|v| *v = 0.0);
            for s in 0..mx {
                w[s * my + tau] = ft[(j, s)];
            }
            let block = contract(&op.apply(&w));
            for i in 0..n {
                for t in 0..my {
                    m[(i * my + t, j * my + tau)] = block[(i, t)] * dy[tau];
                }
            }
        }
    }
    for k in 0..size {
        m[(k, k)] += n as f64 * lambda;
    }
    let u = DVector::from_iterator(size, (0..n).flat_map(|i| data.outputs[i].values.iter().copied()));
    let basis = null_g.on_grid(&xy)?;
    let r = basis.len();
    let mut t = DMatrix::zeros(size, r);
    for (k, e) in basis.iter().enumerate() {
        let tk = contract(e);
        for i in 0..n {
            for tt in 0..my {
                t[(i * my + tt, k)] = tk[(i, tt)];
            }
        }
    }
    let mut rhs = DMatrix::zeros(size, 1 + r);
    rhs.column_mut(0).copy_from(&u);
    for k in 0..r {
        rhs.column_mut(k + 1).copy_from(&t.column(k));
    }
    let lu = m.clone().lu();
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Singular(String::from("regularized block system is singular")))?;
    let dyw = DVector::from_iterator(size, (0..size).map(|k| dy[k % my]));
    let d = if r == 0 {
        Vec::new()
    } else {
        // A_kl = <T^k, M^{-1} T^l>, b_k = <T^k, M^{-1} u>, both in the dy-weighted inner product
        let a = DMatrix::from_fn(r, r, |k, l| {
            t.column(k).component_mul(&dyw).dot(&sol.column(l + 1))
        });
        let b = DMatrix::from_fn(r, 1, |k, _| t.column(k).component_mul(&dyw).dot(&sol.column(0)));
        let d = lu_solve(a, &b, "null-space matrix A")?;
        d.column(0).iter().copied().collect()
    };
    let mut c = sol.column(0).into_owned();
    for (k, dk) in d.iter().enumerate() {
        c -= sol.column(k + 1) * *dk;
    }
    let mut lhs = &m * &c;
    for (k, dk) in d.iter().enumerate() {
        lhs += t.column(k) * *dk;
    }
    let residual = (lhs - &u).norm() / u.norm().max(f64::MIN_POSITIVE);
    if !residual.is_finite() {
        return Err(Error::Singular(String::from("ridge solve produced non-finite weights")));
    }
    Ok(RidgeSolution {
        // `c` is stored sample-major: entry (i, t) at i * my + t
        c: DMatrix::from_fn(n, my, |i, tt| c[i * my + tt]),
        d,
        residual,
    })
}

/// Direct minimizer of the model's risk over all parameter blocks at once.
///
/// Solves the stationarity conditions in the weighted variables `W~`, `w~`:
///
/// ```text
/// dy (.) (S G + m (x) beta) + lambda W~ = dy (.) C
/// dy (.) (m^T G + beta)     + rho w~    = dy (.) mean(U)
/// ```
///
/// plus orthogonality of the residual to every null-space function, where
/// `S = (1/n) sum F~_i F~_i^T`, `m = (1/n) sum F~_i`, `C = (1/n) sum F~_i (x) U_i`.
/// The system is dense in `m_x m_y + m_y + r + r'` unknowns.
pub fn solve_exact_weights(model: &GreensModel, data: &Dataset) -> Result<Params> {
    let (mx, my) = (model.x_grid().len(), model.y_grid().len());
    if *data.x_grid != **model.x_grid() || *data.y_grid != **model.y_grid() {
        return Err(invalid("dataset grids differ from the model's training grids"));
    }
    let nw = mx * my;
    let nb = model.w_b.len();
    let (r, rb) = (model.d.len(), model.q.len());
    let size = nw + nb + r + rb;
    if size > 12000 {
        return Err(invalid(format!("exact system of size {size} is too large for a dense solve")));
    }
    let n = data.n() as f64;
    let dy = model.y_grid().weights();
    let mut ft = data.input_matrix();
    for (j, &w) in model.x_grid().weights().iter().enumerate() {
        ft.column_mut(j).scale_mut(w);
    }
    let s = ft.tr_mul(&ft) / n;
    let mean_f = DVector::from_iterator(mx, (0..mx).map(|j| ft.column(j).sum() / n));
    let targets = data.output_matrix();
    let c = ft.tr_mul(&targets) / n;
    let mean_u: Vec<f64> = (0..my).map(|t| targets.column(t).sum() / n).collect();

    // residual conditions for the (weighted) parameter vector, without the data rhs
    let apply = |theta: &[f64]| -> Vec<f64> {
        let (wg, rest) = theta.split_at(nw);
        let (wb, rest) = rest.split_at(nb);
        let (d, q) = rest.split_at(r);
        let mut g = model.op_g().apply(wg);
        for (k, e) in model.e_g().iter().enumerate() {
            for (o, v) in g.iter_mut().zip(e) {
                *o += d[k] * v;
            }
        }
        let mut beta = vec![0.0; my];
        if let Some(op) = model.op_b() {
            beta = op.apply(wb);
            for (k, e) in model.e_b().iter().enumerate() {
                for (o, v) in beta.iter_mut().zip(e) {
                    *o += q[k] * v;
                }
            }
        }
        let gm = DMatrix::from_row_slice(mx, my, &g);
        let sg = &s * &gm;
        let mtg = gm.tr_mul(&mean_f);
        let mut z = vec![0.0; nw];
        for i in 0..mx {
            for t in 0..my {
                z[i * my + t] = dy[t] * (sg[(i, t)] + mean_f[i] * beta[t]);
            }
        }
        let zb: Vec<f64> = (0..my).map(|t| dy[t] * (mtg[t] + beta[t])).collect();
        let mut out = Vec::with_capacity(size);
        out.extend(z.iter().zip(wg).map(|(z, w)| z + model.lambda * w));
        if nb > 0 {
            out.extend(zb.iter().zip(wb).map(|(z, w)| z + model.rho * w));
        }
        out.extend(model.e_g().iter().map(|e| dot(e, &z)));
        out.extend(model.e_b().iter().map(|e| dot(e, &zb)));
        out
    };
    let mut a = DMatrix::zeros(size, size);
    let mut unit = vec![0.0; size];
    for j in 0..size {
        unit[j] = 1.0;
        let col = apply(&unit);
        a.column_mut(j).copy_from_slice(&col);
        unit[j] = 0.0;
    }
    let mut z_u = vec![0.0; nw];
    for i in 0..mx {
        for t in 0..my {
            z_u[i * my + t] = dy[t] * c[(i, t)];
        }
    }
    let zb_u: Vec<f64> = (0..my).map(|t| dy[t] * mean_u[t]).collect();
    let mut rhs = z_u.clone();
    if nb > 0 {
        rhs.extend(&zb_u);
    }
    rhs.extend(model.e_g().iter().map(|e| dot(e, &z_u)));
    rhs.extend(model.e_b().iter().map(|e| dot(e, &zb_u)));
    let theta = lu_solve(a, &DMatrix::from_vec(size, 1, rhs), "exact weight system")?;
    let theta = theta.as_slice();
    let xyw = model.xy_weights();
    Ok(Params {
        w_g: (0..nw).map(|k| theta[k] / xyw[k]).collect(),
        w_b: (0..nb).map(|k| theta[nw + k] / dy[k]).collect(),
        d: theta[nw + nb..nw + nb + r].to_vec(),
        q: theta[nw + nb + r..].to_vec(),
    })
}

#[cfg(test)]
mod tests;
