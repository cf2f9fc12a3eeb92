//! Finite-difference and finite-volume solvers used to generate training data.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::grid::{Axis, Grid};
use crate::stochastic::FunctionSample;

/// Solve a tridiagonal system `sub[i] x[i-1] + diag[i] x[i] + sup[i] x[i+1] = rhs[i]`.
pub(crate) fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let scale = diag.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut piv = diag[0];
    for i in 0..n {
        if i > 0 {
            piv = diag[i] - sub[i] * c[i - 1];
        }
        if piv.abs() <= 1e-13 * scale {
            return Err(Error::Singular(format!("zero pivot in row {i} of a tridiagonal solve")));
        }
        c[i] = if i + 1 < n { sup[i] / piv } else { 0.0 };
        d[i] = if i > 0 { (rhs[i] - sub[i] * d[i - 1]) / piv } else { rhs[i] / piv };
    }
    for i in (0..n.saturating_sub(1)).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

fn uniform_spacing(ax: &Axis) -> Result<f64> {
    let h = ax.coords[1] - ax.coords[0];
    for w in ax.coords.windows(2) {
        if ((w[1] - w[0]) - h).abs() > 1e-9 * h {
            return Err(invalid("finite-difference solvers need equispaced grids"));
        }
    }
    Ok(h)
}

fn unit_interval(grid: &Grid, what: &str) -> Result<(f64, usize)> {
    if grid.dims() != 1 {
        return Err(invalid(format!("{what} needs a one-dimensional grid")));
    }
    let ax = &grid.axes()[0];
    if ax.len() < 3 {
        return Err(invalid(format!("{what} needs at least 3 grid points")));
    }
    if (ax.coords[0] - ax.bounds.0).abs() > 1e-12 || (ax.coords[ax.len() - 1] - ax.bounds.1).abs() > 1e-12 {
        return Err(invalid(format!("{what} needs a grid that includes both endpoints")));
    }
    Ok((uniform_spacing(ax)?, ax.len()))
}

/// `u'' = f` with `u(a) = u0`, `u(b) = u1`, second-order central differences.
pub fn solve_poisson_1d(f: &FunctionSample, u0: f64, u1: f64) -> Result<FunctionSample> {
    let (h, m) = unit_interval(&f.grid, "the Poisson solver")?;
    let n = m - 2;
    let inv = 1.0 / (h * h);
    let mut rhs: Vec<f64> = f.values[1..m - 1].to_vec();
    rhs[0] -= u0 * inv;
    rhs[n - 1] -= u1 * inv;
    let sol = solve_tridiagonal(&vec![inv; n], &vec![-2.0 * inv; n], &vec![inv; n], &rhs)?;
    let mut values = Vec::with_capacity(m);
    values.push(u0);
    values.extend(sol);
    values.push(u1);
    FunctionSample::new(f.grid.clone(), values)
}

/// `-u'' - omega^2 u = f` with Dirichlet data, second-order central differences.
pub fn solve_helmholtz_1d(f: &FunctionSample, omega: f64, u0: f64, u1: f64) -> Result<FunctionSample> {
    let (h, m) = unit_interval(&f.grid, "the Helmholtz solver")?;
    let ax = &f.grid.axes()[0];
    let len = ax.bounds.1 - ax.bounds.0;
    let w2 = omega * omega;
    let k = libm::round(omega.abs() * len / PI).max(1.0);
    let eig = (PI * k / len) * (PI * k / len);
    let tol = 1e-6 * w2.max(1.0);
    if (w2 - eig).abs() < tol {
        return Err(Error::Resonance {
            omega_sq: w2,
            eigenvalue: eig,
            tol,
        });
    }
    let n = m - 2;
    let inv = 1.0 / (h * h);
    let mut rhs: Vec<f64> = f.values[1..m - 1].to_vec();
    rhs[0] += u0 * inv;
    rhs[n - 1] += u1 * inv;
    let sol = solve_tridiagonal(&vec![-inv; n], &vec![2.0 * inv - w2; n], &vec![-inv; n], &rhs)?;
    let mut values = Vec::with_capacity(m);
    values.push(u0);
    values.extend(sol);
    values.push(u1);
    FunctionSample::new(f.grid.clone(), values)
}

/// Banded Cholesky factor of an SPD matrix with half-bandwidth `b`.
#[derive(Debug, Clone)]
struct BandCholesky {
    n: usize,
    b: usize,
    /// `l[i * (b + 1) + (i - j)] = L[i, j]` for `0 <= i - j <= b`.
    l: Vec<f64>,
}

impl BandCholesky {
    fn factor(n: usize, b: usize, entry: impl Fn(usize, usize) -> f64) -> Result<BandCholesky> {
        let w = b + 1;
        let mut l = vec![0.0; n * w];
        for j in 0..n {
            for i in j..(j + b + 1).min(n) {
                let mut s = entry(i, j);
                let k0 = i.saturating_sub(b);
                for k in k0..j {
                    s -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::Singular(format!("matrix is not positive definite at row {j}")));
                    }
                    l[j * w] = libm::sqrt(s);
                } else {
                    l[i * w + (i - j)] = s / l[j * w];
                }
            }
        }
        Ok(BandCholesky { n, b, l })
    }

    fn solve(&self, rhs: &mut [f64]) {
        let (n, b, w) = (self.n, self.b, self.b + 1);
        for i in 0..n {
            let mut s = rhs[i];
            for k in i.saturating_sub(b)..i {
                s -= self.l[i * w + (i - k)] * rhs[k];
            }
            rhs[i] = s / self.l[i * w];
        }
        for i in (0..n).rev() {
            let mut s = rhs[i];
            for k in (i + 1)..(i + b + 1).min(n) {
                s -= self.l[k * w + (k - i)] * rhs[k];
            }
            rhs[i] = s / self.l[i * w];
        }
    }
}

/// Interior grid of the unit square with `m` points per axis at spacing `1/(m+1)`.
pub fn schrodinger_interior_grid(m: usize) -> Result<Grid> {
    if m < 2 {
        return Err(invalid("interior grid needs at least 2 points per axis"));
    }
    // The domain stays the unit square at every resolution, so models trained
    // on one interior grid can be assembled on another.
    let h = 1.0 / (m + 1) as f64;
    let axis = Axis {
        bounds: (0.0, 1.0),
        coords: (1..=m).map(|i| i as f64 * h).collect(),
        weights: vec![1.0 / m as f64; m],
    };
    Ok(Grid::from_axes(vec![axis.clone(), axis]))
}

/// Boundary of the unit square flattened counterclockwise from the origin onto `[0, 4)`.
pub fn schrodinger_boundary_grid(m: usize) -> Result<Grid> {
    Grid::periodic((0.0, 4.0), 4 * (m + 1))
}

/// Point of the unit square at arc length `s` along the boundary.
pub fn boundary_point(s: f64) -> (f64, f64) {
    match s {
        s if s < 1.0 => (s, 0.0),
        s if s < 2.0 => (1.0, s - 1.0),
        s if s < 3.0 => (3.0 - s, 1.0),
        s => (0.0, 4.0 - s),
    }
}

/// Factored 5-point discretization of `Delta u - V u = 0` on the unit square.
#[derive(Debug, Clone)]
pub struct SchrodingerSolver {
    m: usize,
    chol: BandCholesky,
    interior: Arc<Grid>,
    boundary: Arc<Grid>,
}

impl SchrodingerSolver {
    /// `v` holds the potential at the interior points, row-major in `(x, y)`.
    pub fn new(m: usize, v: &[f64]) -> Result<SchrodingerSolver> {
        if m < 2 {
            return Err(invalid("the Schrodinger solver needs m >= 2 interior points per axis"));
        }
        if v.len() != m * m {
            return Err(invalid("potential must have one value per interior point"));
        }
        if v.iter().any(|&x| !(x >= 0.0)) {
            return Err(invalid("the potential must be nonnegative"));
        }
        let h = 1.0 / (m + 1) as f64;
        let inv = 1.0 / (h * h);
        let chol = BandCholesky::factor(m * m, m, |i, j| {
            if i == j {
                4.0 * inv + v[i]
            } else if (i - j == m) || (i - j == 1 && i % m != 0) {
                -inv
            } else {
                0.0
            }
        })?;
        Ok(SchrodingerSolver {
            m,
            chol,
            interior: Arc::new(schrodinger_interior_grid(m)?),
            boundary: Arc::new(schrodinger_boundary_grid(m)?),
        })
    }

    pub fn interior_grid(&self) -> &Arc<Grid> {
        &self.interior
    }

    pub fn boundary_grid(&self) -> &Arc<Grid> {
        &self.boundary
    }

    pub fn solve(&self, f: &FunctionSample) -> Result<FunctionSample> {
        let m = self.m;
        if f.values.len() != 4 * (m + 1) {
            return Err(invalid(format!(
                "boundary data must have 4 (m + 1) = {} values",
                4 * (m + 1)
            )));
        }
        let h = 1.0 / (m + 1) as f64;
        let inv = 1.0 / (h * h);
        let b = &f.values;
        let p = m + 1;
        let mut rhs = vec![0.0; m * m];
        for i in 0..m {
            // bottom y = 0 and top y = 1 at x = (i + 1) h
            rhs[i * m] += inv * b[i + 1];
            rhs[i * m + m - 1] += inv * b[3 * p - (i + 1)];
            // left x = 0 and right x = 1 at y = (i + 1) h
            rhs[i] += inv * b[4 * p - (i + 1)];
            rhs[(m - 1) * m + i] += inv * b[p + i + 1];
        }
        self.chol.solve(&mut rhs);
        FunctionSample::new(self.interior.clone(), rhs)
    }
}

/// `Delta u - V u = 0` in the unit square with `u = f` on the boundary.
pub fn solve_schrodinger_2d(v: &[f64], f: &FunctionSample) -> Result<FunctionSample> {
    let n = f.values.len();
    if n % 4 != 0 || n < 12 {
        return Err(invalid("boundary grid must have 4 (m + 1) points with m >= 2"));
    }
    SchrodingerSolver::new(n / 4 - 1, v)?.solve(f)
}

fn space_time_axes(grid: &Grid) -> Result<(&Axis, &Axis, f64, f64)> {
    if grid.dims() != 2 {
        return Err(invalid("expected a space x time grid"));
    }
    let (x, t) = (&grid.axes()[0], &grid.axes()[1]);
    if x.len() < 3 || t.len() < 2 {
        return Err(invalid("space x time grid is too coarse"));
    }
    Ok((x, t, uniform_spacing(x)?, uniform_spacing(t)?))
}

/// `u_t - k u_xx = f` with zero initial and boundary values, implicit Euler in time.
///
/// The grid is `x` (axis 0) by `t` (axis 1); the first time level is the initial one.
pub fn solve_heat_1d(f: &FunctionSample, k: f64) -> Result<FunctionSample> {
    if !(k > 0.0) {
        return Err(invalid("diffusivity must be positive"));
    }
    let (x, t, h, dt) = space_time_axes(&f.grid)?;
    let (mx, mt) = (x.len(), t.len());
    let n = mx - 2;
    let r = k * dt / (h * h);
    let mut u = vec![0.0; mx * mt];
    let mut prev = vec![0.0; n];
    for step in 1..mt {
        let rhs: Vec<f64> = (0..n).map(|i| prev[i] + dt * f.values[(i + 1) * mt + step]).collect();
        let next = solve_tridiagonal(&vec![-r; n], &vec![1.0 + 2.0 * r; n], &vec![-r; n], &rhs)?;
        for i in 0..n {
            u[(i + 1) * mt + step] = next[i];
        }
        prev = next;
    }
    FunctionSample::new(f.grid.clone(), u)
}

/// `rho_t = (U' rho + alpha rho_x)_x` with zero flux at both ends.
///
/// Cell `i` is centred on node `i` with width `h`; face fluxes use the centred
/// average of `rho` and `U'` at the face, and time stepping is implicit Euler, so
/// `sum_i rho_i` is conserved to rounding.
pub fn solve_fokker_planck_1d(
    rho0: &FunctionSample,
    potential: &dyn Fn(f64) -> f64,
    alpha: f64,
    grid: Arc<Grid>,
) -> Result<FunctionSample> {
    if !(alpha > 0.0) {
        return Err(invalid("diffusivity alpha must be positive"));
    }
    let (x, t, h, dt) = space_time_axes(&grid)?;
    if rho0.grid.dims() != 1 || rho0.grid.axes()[0].coords != x.coords {
        return Err(invalid("initial density must live on the spatial axis of the grid"));
    }
    let (mx, mt) = (x.len(), t.len());
    let du = |z: f64| {
        let e = 1e-5 * z.abs().max(1.0);
        (potential(z + e) - potential(z - e)) / (2.0 * e)
    };
    // J_{i+1/2} = a_i rho_i + b_i rho_{i+1}
    let mut a = vec![0.0; mx - 1];
    let mut b = vec![0.0; mx - 1];
    for i in 0..mx - 1 {
        let up = du(0.5 * (x.coords[i] + x.coords[i + 1]));
        a[i] = 0.5 * up - alpha / h;
        b[i] = 0.5 * up + alpha / h;
    }
    let c = dt / h;
    let mut sub = vec![0.0; mx];
    let mut diag = vec![1.0; mx];
    let mut sup = vec![0.0; mx];
    for i in 0..mx {
        if i + 1 < mx {
            diag[i] -= c * a[i];
            sup[i] = -c * b[i];
        }
        if i > 0 {
            diag[i] += c * b[i - 1];
            sub[i] = c * a[i - 1];
        }
    }
    let mut out = vec![0.0; mx * mt];
    let mut rho = rho0.values.clone();
    for i in 0..mx {
        out[i * mt] = rho[i];
    }
    for step in 1..mt {
        rho = solve_tridiagonal(&sub, &diag, &sup, &rho)?;
        for i in 0..mx {
            out[i * mt + step] = rho[i];
        }
    }
    FunctionSample::new(grid, out)
}

/// The double-well potential `x^4 / 4 - 3 x^2 / 2`.
pub fn double_well(x: f64) -> f64 {
    let x2 = x * x;
    0.25 * x2 * x2 - 1.5 * x2
}
