//! Mercer spectra on grids, tensor-product eigenvalue enumeration and decay fits.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{invalid, Error, Result};
use crate::grid::Grid;
use crate::kernels::{KernelOperator, KernelSpec};

mod study;
pub use study::{bridge_dirichlet_gamma, convergence_study, StudyConfig, StudyRow, StudyTable};

/// Least-squares fit of `log lambda_k = intercept - rate * log k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub rate: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the log-log fit.
    pub residual: f64,
}

/// Eigenpairs of a discretized integral operator.
#[derive(Debug, Clone)]
pub struct SpectralReport {
    /// Nonincreasing eigenvalues.
    pub eigenvalues: Vec<f64>,
    /// One column per eigenvalue, orthonormal in the grid's weighted inner product.
    pub eigenvectors: DMatrix<f64>,
    pub decay_fit: Option<DecayFit>,
    pub description: String,
}

/// Eigenpairs of `phi -> int K(., xi) phi(xi) dxi` on `grid`, largest first.
pub fn mercer_eig(spec: &KernelSpec, grid: &Grid, top_k: usize) -> Result<SpectralReport> {
    let gram = KernelOperator::between(spec, grid, grid)?.to_dense();
    let mut report = mercer_eig_gram(&gram, grid.weights(), top_k)?;
    report.description = format!("{spec:?} on grid of shape {:?}", grid.shape());
    Ok(report)
}

/// Weighted eigenproblem for a precomputed Gram (or sampled covariance) matrix.
///
/// Solves `W^{1/2} K W^{1/2} u = mu u` and returns `v = W^{-1/2} u`, so that the
/// eigenvectors are orthonormal under `diag(weights)`. Eigenvalues within
/// `1e-8 * mu_max` below zero are clipped to zero.
pub fn mercer_eig_gram(gram: &DMatrix<f64>, weights: &[f64], top_k: usize) -> Result<SpectralReport> {
    let m = weights.len();
    if gram.nrows() != m || gram.ncols() != m {
        return Err(invalid("gram matrix and weights disagree in size"));
    }
    if top_k > m {
        return Err(invalid(format!("top_k = {top_k} exceeds the grid size {m}")));
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(invalid("quadrature weights must be positive"));
    }
    let sw: Vec<f64> = weights.iter().map(|&w| libm::sqrt(w)).collect();
    let mut s = DMatrix::from_fn(m, m, |i, j| sw[i] * gram[(i, j)] * sw[j]);
    // symmetrize away rounding in the Gram assembly
    s = (&s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let max = order.first().map(|&i| eig.eigenvalues[i]).unwrap_or(0.0);
    let tol = 1e-8 * max.abs();
    let mut values = Vec::with_capacity(top_k);
    let mut vectors = DMatrix::zeros(m, top_k);
    for (c, &i) in order.iter().take(top_k).enumerate() {
        let mut v = eig.eigenvalues[i];
        if v < 0.0 && v >= -tol {
            v = 0.0;
        }
        values.push(v);
        for r in 0..m {
            vectors[(r, c)] = eig.eigenvectors[(r, i)] / sw[r];
        }
    }
    let positive: Vec<f64> = values.iter().copied().take_while(|&v| v > tol.max(f64::MIN_POSITIVE)).collect();
    let decay_fit = if positive.len() >= 5 {
        fit_decay_rate(&positive).ok()
    } else {
        None
    };
    Ok(SpectralReport {
        eigenvalues: values,
        eigenvectors: vectors,
        decay_fit,
        description: String::new(),
    })
}

/// Fitted polynomial decay rate `r` of `lambda_k ~ k^{-r}`.
///
/// Sequences of at least 10 entries drop the first 3 and the last 20% before the
/// fit, where truncation and discretization distort the spectrum.
pub fn fit_decay_rate(eigs: &[f64]) -> Result<DecayFit> {
    if eigs.len() < 5 {
        return Err(invalid("decay fit needs at least 5 eigenvalues"));
    }
    if let Some(i) = eigs.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(invalid(format!("decay fit needs positive eigenvalues, entry {i} is {}", eigs[i])));
    }
    let n = eigs.len();
    let (lo, hi) = if n >= 10 { (3, n - n / 5) } else { (0, n) };
    let pts: Vec<(f64, f64)> = (lo..hi)
        .map(|i| (libm::log((i + 1) as f64), libm::log(eigs[i])))
        .collect();
    let len = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / len;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / len;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = pts
        .iter()
        .map(|p| {
            let e = p.1 - intercept - slope * p.0;
            e * e
        })
        .sum();
    Ok(DecayFit {
        rate: -slope,
        intercept,
        residual: libm::sqrt(ss / len),
    })
}

fn pair(a: u64, b: u64) -> Result<u64> {
    let overflow = || invalid("cantor index overflows 64 bits");
    let s = a.checked_add(b).ok_or_else(overflow)?;
    let prod = (s - 2).checked_mul(s - 1).ok_or_else(overflow)?;
    (prod / 2).checked_add(b).ok_or_else(overflow)
}

fn unpair(n: u64) -> (u64, u64) {
    // t = k1 + k2 - 1 is the smallest t with t (t + 1) / 2 >= n
    let mut t = ((libm::sqrt(8.0 * n as f64 + 1.0) - 1.0) / 2.0) as u64;
    while (t as u128) * (t as u128 + 1) / 2 < n as u128 {
        t += 1;
    }
    while t > 1 && ((t - 1) as u128) * (t as u128) / 2 >= n as u128 {
        t -= 1;
    }
    let k2 = n - (t - 1) * t / 2;
    (t + 1 - k2, k2)
}

/// Cantor m-tupling index of a tuple of positive integers (the identity for `m = 1`).
pub fn cantor_index(tuple: &[u64]) -> Result<u64> {
    if tuple.is_empty() {
        return Err(invalid("cantor index of an empty tuple"));
    }
    if let Some(i) = tuple.iter().position(|&k| k == 0) {
        return Err(invalid(format!("cantor index needs positive components, entry {i} is 0")));
    }
    let mut acc = tuple[0];
    for &k in &tuple[1..] {
        acc = pair(acc, k)?;
    }
    Ok(acc)
}

/// Inverse of [`cantor_index`]: the `m`-tuple with index `n`.
pub fn cantor_enumerate(n: u64, m: usize) -> Result<Vec<u64>> {
    if n == 0 || m == 0 {
        return Err(invalid("cantor enumeration needs n >= 1 and m >= 1"));
    }
    let mut out = vec![0; m];
    let mut rest = n;
    for slot in (1..m).rev() {
        let (a, b) = unpair(rest);
        out[slot] = b;
        rest = a;
    }
    out[0] = rest;
    Ok(out)
}

/// Visit multi-indices (zero-based) in Cantor order, skipping those outside `lens`,
/// until `count` have been produced or the box is exhausted.
fn cantor_walk(lens: &[usize], count: usize, mut visit: impl FnMut(&[usize])) {
    let total: usize = lens.iter().product();
    let want = count.min(total);
    let mut seen = 0;
    let mut n = 1u64;
    let mut idx = vec![0usize; lens.len()];
    while seen < want {
        let t = match cantor_enumerate(n, lens.len()) {
            Ok(t) => t,
            Err(_) => break,
        };
        n += 1;
        if t.iter().zip(lens).all(|(&k, &l)| (k as usize) <= l) {
            for (d, &k) in idx.iter_mut().zip(&t) {
                *d = k as usize - 1;
            }
            visit(&idx);
            seen += 1;
        }
    }
}

/// Products of factor eigenvalues in Cantor enumeration order (unsorted).
pub fn tensor_products_cantor(factors: &[Vec<f64>], count: usize) -> Vec<f64> {
    let lens: Vec<usize> = factors.iter().map(Vec::len).collect();
    let mut out = Vec::new();
    if factors.is_empty() {
        return out;
    }
    cantor_walk(&lens, count, |idx| {
        out.push(idx.iter().zip(factors).map(|(&i, f)| f[i]).product());
    });
    out
}

/// The first `count` tensor-product eigenvalues in Cantor order, sorted decreasing.
pub fn tensor_eig_enumerate(factors: &[Vec<f64>], count: usize) -> Vec<f64> {
    let mut v = tensor_products_cantor(factors, count);
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Joint spectrum of a covariance with eigenvalues `mu_i` and a kernel whose
/// eigenfunctions are `phi_i (x) psi_j` with eigenvalues `rho[i][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDiag {
    /// `gamma_ij = mu_i rho_ij`, indexed like `rho`.
    pub gamma_grid: Vec<Vec<f64>>,
    /// All `gamma_ij` sorted decreasing.
    pub gamma: Vec<f64>,
    /// `mu_i^{-1/2}`, the scaling turning `Psi_ij` into the jointly orthogonal basis.
    pub omega_scale: Vec<f64>,
}

pub fn sim_diag_commuting(mu: &[f64], rho: &[Vec<f64>]) -> Result<SimDiag> {
    if rho.len() > mu.len() {
        return Err(invalid(format!(
            "rho has {} rows but only {} covariance eigenvalues were given",
            rho.len(),
            mu.len()
        )));
    }
    if let Some(i) = mu.iter().take(rho.len()).position(|&m| !(m > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "covariance eigenvalue mu_{} = {} is not positive, so the covariance is not injective",
            i + 1,
            mu[i]
        )));
    }
    let gamma_grid: Vec<Vec<f64>> = rho
        .iter()
        .zip(mu)
        .map(|(row, &m)| row.iter().map(|&r| m * r).collect())
        .collect();
    let lens: Vec<usize> = vec![gamma_grid.len(), gamma_grid.iter().map(Vec::len).max().unwrap_or(0)];
    let mut gamma = Vec::new();
    cantor_walk(&lens, usize::MAX, |idx| {
        if let Some(&g) = gamma_grid[idx[0]].get(idx[1]) {
            gamma.push(g);
        }
    });
    gamma.sort_by(|a, b| b.total_cmp(a));
    Ok(SimDiag {
        omega_scale: mu.iter().take(rho.len()).map(|&m| 1.0 / libm::sqrt(m)).collect(),
        gamma_grid,
        gamma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;
    use proptest::prelude::*;

    #[test]
    fn brownian_bridge_spectrum() {
        let g = Grid::uniform((0.0, 1.0), 200).unwrap();
        let r = mercer_eig(&KernelSpec::BrownianBridge { sigma2: 1.0 }, &g, 10).unwrap();
        for k in 1..=5 {
            let exact = 1.0 / (PI * PI * (k * k) as f64);
            assert!((r.eigenvalues[k - 1] - exact).abs() < 0.02 * exact);
        }
        // weighted orthonormality
        let w = g.weights();
        for i in 0..10 {
            for j in 0..10 {
                let ip: f64 = (0..200).map(|s| r.eigenvectors[(s, i)] * w[s] * r.eigenvectors[(s, j)]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((ip - target).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rank_one_spectrum() {
        let g = Grid::uniform((0.0, 1.0), 40).unwrap();
        let phi: Vec<f64> = g.map(|p| 1.0 + p[0] * p[0]);
        let gram = DMatrix::from_fn(40, 40, |i, j| phi[i] * phi[j]);
        let r = mercer_eig_gram(&gram, g.weights(), 3).unwrap();
        let norm = g.norm_sq(&phi);
        assert!((r.eigenvalues[0] - norm).abs() < 1e-12 * norm);
        assert!(r.eigenvalues[1].abs() < 1e-12 * norm);
    }

    #[test]
    fn dirichlet_kernel_top_mode() {
        let a = Grid::uniform((0.0, 1.0), 30).unwrap();
        let g = Grid::tensor(&[a.clone(), a]).unwrap();
        let r = mercer_eig(&KernelSpec::sobolev1_dirichlet(2), &g, 2).unwrap();
        // largest series coefficient against phi = 2 sin(pi x) sin(pi y); the discrete
        // operator sees it scaled by the grid's own quadrature norm of phi
        let f = g.map(|p| 2.0 * libm::sin(PI * p[0]) * libm::sin(PI * p[1]));
        let expected = g.norm_sq(&f) / (2.0 * PI * PI);
        assert!((r.eigenvalues[0] - expected).abs() < 0.01 * expected, "{}", r.eigenvalues[0]);
        let v: Vec<f64> = (0..g.len()).map(|i| r.eigenvectors[(i, 0)]).collect();
        let c = g.inner(&v, &f).abs() / libm::sqrt(g.norm_sq(&f));
        assert!(c > 0.99, "{c}");
    }

    #[test]
    fn min_kernel_decay() {
        let g = Grid::uniform((0.0, 1.0), 200).unwrap();
        let r = mercer_eig(&KernelSpec::SobolevTail { order: 1 }, &g, 199).unwrap();
        let positive: Vec<f64> = r.eigenvalues.iter().copied().take_while(|&v| v > 0.0).collect();
        let fit = fit_decay_rate(&positive).unwrap();
        assert!((fit.rate - 2.0).abs() < 0.2, "{}", fit.rate);
    }

    #[test]
    fn decay_fit_exact_power_laws() {
        let e: Vec<f64> = (1..=50).map(|k| 1.0 / (k * k) as f64).collect();
        assert!((fit_decay_rate(&e).unwrap().rate - 2.0).abs() < 1e-10);
        let e: Vec<f64> = (1..=7).map(|k| 3.5 / k as f64).collect();
        assert!((fit_decay_rate(&e).unwrap().rate - 1.0).abs() < 1e-12);
        assert!(fit_decay_rate(&[1.0, 0.5, 0.0, 0.1, 0.05]).is_err());
        assert!(fit_decay_rate(&[1.0, 0.5]).is_err());
    }

    #[test]
    fn cantor_examples() {
        assert_eq!(cantor_index(&[1, 1]).unwrap(), 1);
        assert_eq!(cantor_index(&[2, 1]).unwrap(), 2);
        assert_eq!(cantor_index(&[1, 2]).unwrap(), 3);
        assert!(cantor_index(&[0, 2]).is_err());
        let t = [3, 5, 2];
        let inner = cantor_index(&[3, 5]).unwrap();
        assert_eq!(cantor_index(&t).unwrap(), cantor_index(&[inner, 2]).unwrap());
    }

    #[test]
    fn cantor_roundtrip_exhaustive() {
        for a in 1..=20u64 {
            for b in 1..=20u64 {
                let n = cantor_index(&[a, b]).unwrap();
                assert_eq!(cantor_enumerate(n, 2).unwrap(), vec![a, b]);
                for c in 1..=20u64 {
                    let n = cantor_index(&[a, b, c]).unwrap();
                    assert_eq!(cantor_enumerate(n, 3).unwrap(), vec![a, b, c]);
                }
            }
        }
    }

    #[test]
    fn cantor_injective_to_fifty() {
        let mut seen = alloc::collections::BTreeSet::new();
        for a in 1..=50u64 {
            for b in 1..=50u64 {
                assert!(seen.insert(cantor_index(&[a, b]).unwrap()));
            }
        }
    }

    #[test]
    fn tensor_enumeration_small() {
        let f = vec![vec![1.0, 0.5], vec![1.0, 0.5]];
        assert_eq!(tensor_eig_enumerate(&f, 4), vec![1.0, 0.5, 0.5, 0.25]);
    }

    #[test]
    fn tensor_enumeration_matches_brute_force() {
        let a: Vec<f64> = (1..=20).map(|k| 1.0 / (k as f64).powf(1.5)).collect();
        let b: Vec<f64> = (1..=20).map(|k| (-0.3 * k as f64).exp()).collect();
        let mut brute: Vec<f64> = a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect();
        brute.sort_by(|x, y| y.total_cmp(x));
        assert_eq!(tensor_eig_enumerate(&[a, b], 400), brute);
    }

    #[test]
    fn tensor_enumeration_decay() {
        let f: Vec<f64> = (1..=100).map(|k| 1.0 / (k * k) as f64).collect();
        let e = tensor_eig_enumerate(&[f.clone(), f], 100);
        assert!(fit_decay_rate(&e).unwrap().rate >= 1.0);
    }

    #[test]
    fn sim_diag_identity_covariance() {
        let rho = vec![vec![0.5, 0.25], vec![0.2, 0.1]];
        let s = sim_diag_commuting(&[1.0, 1.0], &rho).unwrap();
        assert_eq!(s.gamma_grid, rho);
        assert_eq!(s.gamma, vec![0.5, 0.25, 0.2, 0.1]);
        assert!(sim_diag_commuting(&[1.0, 0.0], &rho).is_err());
    }

    #[test]
    fn reconstruction_from_top_modes() {
        let g = Grid::uniform((0.0, 1.0), 80).unwrap();
        let spec = KernelSpec::Exponential { length: 0.3, axes: 1 };
        let r = mercer_eig(&spec, &g, 80).unwrap();
        let total: f64 = r.eigenvalues.iter().sum();
        let mut acc = 0.0;
        let mut k = 0;
        while acc < 0.9 * total {
            acc += r.eigenvalues[k];
            k += 1;
        }
        let pts: Vec<&[f64]> = g.points().collect();
        let gram = crate::kernels::gram_cross(&spec, &pts, &pts).unwrap();
        let mut rec = DMatrix::zeros(80, 80);
        for j in 0..k {
            let v = r.eigenvectors.column(j);
            rec += r.eigenvalues[j] * v * v.transpose();
        }
        let err = (&gram - &rec).norm() / gram.norm();
        assert!(err < 0.05, "{k} modes, error {err}");
    }

    #[test]
    fn joint_diagonalization_identities_at_truncation_400() {
        // 22 points with endpoints give 20 interior sine modes per axis
        let m = 22;
        let modes = 20;
        let g1 = Grid::uniform((0.0, 1.0), m).unwrap();
        let cov_spec = KernelSpec::BrownianBridge { sigma2: 1.0 };
        let cov = mercer_eig(&cov_spec, &g1, modes).unwrap();
        let c = KernelOperator::between(&cov_spec, &g1, &g1).unwrap().to_dense();
        let xy = Grid::tensor(&[g1.clone(), g1.clone()]).unwrap();
        let k = KernelOperator::between(&KernelSpec::sobolev1_dirichlet(2), &xy, &xy).unwrap().to_dense();
        let w = xy.weights();
        let wx = g1.weights();
        let psi = |i: usize, j: usize| -> Vec<f64> {
            (0..m * m).map(|p| cov.eigenvectors[(p / m, i)] * cov.eigenvectors[(p % m, j)]).collect()
        };
        let quad = |a: &[f64], b: &[f64]| -> f64 {
            let wa: Vec<f64> = a.iter().zip(w).map(|(x, w)| x * w).collect();
            let wb: Vec<f64> = b.iter().zip(w).map(|(x, w)| x * w).collect();
            (DMatrix::from_row_slice(1, m * m, &wa) * &k * DMatrix::from_column_slice(m * m, 1, &wb))[(0, 0)]
        };
        let rho: Vec<Vec<f64>> = (0..modes).map(|i| (0..modes).map(|j| quad(&psi(i, j), &psi(i, j))).collect()).collect();
        let sd = sim_diag_commuting(&cov.eigenvalues, &rho).unwrap();
        assert_eq!(sd.gamma.len(), 400);

        let mut g = vec![0.0; m * m];
        let mut sum_sq = 0.0;
        let mut sum_ratio = 0.0;
        let mut seed = 12345u64;
        for i in 0..modes {
            for j in 0..modes {
                seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let coef = ((seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5) / (1.0 + (i + j) as f64);
                sum_sq += coef * coef;
                sum_ratio += coef * coef / sd.gamma_grid[i][j];
                let p = psi(i, j);
                for (gv, pv) in g.iter_mut().zip(&p) {
                    *gv += coef * sd.omega_scale[i] * pv;
                }
            }
        }
        // ||G||^2 under the input covariance
        let mut cov_norm = 0.0;
        for t in 0..m {
            for s in 0..m {
                for r in 0..m {
                    cov_norm += wx[t] * wx[s] * wx[r] * g[s * m + t] * c[(s, r)] * g[r * m + t];
                }
            }
        }
        assert!((cov_norm - sum_sq).abs() < 0.01 * sum_sq, "{cov_norm} vs {sum_sq}");
        // G^T K^+ G in the symmetric weighted form
        let sw: Vec<f64> = w.iter().map(|x| libm::sqrt(*x)).collect();
        let sym = DMatrix::from_fn(m * m, m * m, |a, b| sw[a] * k[(a, b)] * sw[b]);
        let eig = SymmetricEigen::new(sym);
        let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let gt: Vec<f64> = g.iter().zip(&sw).map(|(a, b)| a * b).collect();
        let mut j_val = 0.0;
        for (idx, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam > 1e-10 * top {
                let proj: f64 = eig.eigenvectors.column(idx).iter().zip(&gt).map(|(a, b)| a * b).sum();
                j_val += proj * proj / lam;
            }
        }
        assert!((j_val - sum_ratio).abs() < 0.01 * sum_ratio, "{j_val} vs {sum_ratio}");
    }

    proptest! {
        #[test]
        fn sorted_dominates_unsorted_prefixes(
            a in prop::collection::vec(0.01f64..1.0, 2..12),
            b in prop::collection::vec(0.01f64..1.0, 2..12),
        ) {
            let mut a = a; a.sort_by(|x, y| y.total_cmp(x));
            let mut b = b; b.sort_by(|x, y| y.total_cmp(x));
            let count = a.len() * b.len();
            let unsorted = tensor_products_cantor(&[a.clone(), b.clone()], count);
            let sorted = tensor_eig_enumerate(&[a, b], count);
            // the k-th largest value is bounded by the extremes of any k+1 or n-k entries
            for k in 0..count {
                let tail_max = unsorted[k..].iter().cloned().fold(0.0, f64::max);
                prop_assert!(sorted[k] <= tail_max);
                let prefix_min = unsorted[..=k].iter().cloned().fold(f64::MAX, f64::min);
                prop_assert!(sorted[k] >= prefix_min);
            }
        }

        #[test]
        fn psd_kernel_spectra_nonnegative(len in 0.05f64..1.0) {
            let g = Grid::uniform((0.0, 1.0), 30).unwrap();
            let r = mercer_eig(&KernelSpec::Exponential { length: len, axes: 1 }, &g, 30).unwrap();
            prop_assert!(r.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(r.eigenvalues.iter().all(|&v| v >= -1e-8 * r.eigenvalues[0]));
        }
    }
}
