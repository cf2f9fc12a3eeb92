//! Reproducing kernels and the structural transforms used to shape Green's function spaces.
//!
//! A kernel for Green's functions takes two coordinate tuples `p = (x, y)` and
//! `q = (xi, eta)`, each the concatenation of an input-domain point and an
//! output-domain point. Bias kernels take output-domain points only. [`KernelSpec`]
//! is a closed-form description that can be evaluated pointwise ([`eval_kernel`],
//! [`gram_cross`]) or compiled against a pair of tensor grids into a
//! [`KernelOperator`] that applies the integral operator without forming the Gram
//! matrix when the kernel has separable or spectral structure.

mod operator;

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};

use crate::error::{invalid, Error, Result};

pub use operator::KernelOperator;

/// Default number of sine terms per index for the Dirichlet Sobolev kernel.
pub const DEFAULT_SERIES_TERMS: usize = 200;

#[cfg(feature = "serde")]
fn default_terms() -> usize {
    DEFAULT_SERIES_TERMS
}

/// Which half of the time plane a causal kernel keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Direction {
    /// Keeps `t <= s`: responses never precede impulses.
    Causal,
    /// Keeps `t >= s`.
    Anticausal,
}

/// One factor of a product kernel acting on a subset of the coordinate axes.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProductFactor {
    pub kernel: KernelSpec,
    pub axes: Vec<usize>,
}

/// Closed-form description of a reproducing kernel.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(tag = "type", rename_all = "snake_case")
)]
pub enum KernelSpec {
    /// Normalized Gaussian with diagonal covariance, one variance per axis.
    Gaussian { variances: Vec<f64> },
    /// Green's function of `-Laplace` with zero Dirichlet data on `[0,1]^axes`,
    /// summed as a sine series truncated at `terms` per index.
    Sobolev1Dirichlet {
        axes: usize,
        #[cfg_attr(feature = "serde", serde(default = "default_terms"))]
        terms: usize,
    },
    /// Kernel of the functions in `W_m^2[0,1]` vanishing to order `m` at zero.
    SobolevTail { order: u32 },
    /// `sigma2 * (min(x, y) - x y)`.
    BrownianBridge { sigma2: f64 },
    /// `exp(-|p - q| / length)` on `axes` coordinates.
    Exponential { length: f64, axes: usize },
    Product { factors: Vec<ProductFactor> },
    Symmetrized {
        inner: Box<KernelSpec>,
        group_a: Vec<usize>,
        group_b: Vec<usize>,
    },
    Causal {
        inner: Box<KernelSpec>,
        t_axis: usize,
        s_axis: usize,
        direction: Direction,
    },
    /// `K(x, y, xi, eta) = base(y - x, eta - xi)`.
    Convolutional { base: Box<KernelSpec> },
}

impl KernelSpec {
    pub fn gaussian(variances: &[f64]) -> KernelSpec {
        KernelSpec::Gaussian {
            variances: variances.to_vec(),
        }
    }

    pub fn sobolev1_dirichlet(axes: usize) -> KernelSpec {
        KernelSpec::Sobolev1Dirichlet {
            axes,
            terms: DEFAULT_SERIES_TERMS,
        }
    }

    /// Number of coordinates in each argument.
    pub fn arity(&self) -> usize {
        match self {
            KernelSpec::Gaussian { variances } => variances.len(),
            KernelSpec::Sobolev1Dirichlet { axes, .. } => *axes,
            KernelSpec::SobolevTail { .. } | KernelSpec::BrownianBridge { .. } => 1,
            KernelSpec::Exponential { axes, .. } => *axes,
            KernelSpec::Product { factors } => factors.iter().map(|f| f.axes.len()).sum(),
            KernelSpec::Symmetrized { inner, .. } | KernelSpec::Causal { inner, .. } => inner.arity(),
            KernelSpec::Convolutional { base } => 2 * base.arity(),
        }
    }

    /// Structural validation (parameter ranges, axis bookkeeping).
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Gaussian { variances } => {
                if variances.is_empty() || variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(invalid("gaussian variances must be positive"));
                }
            }
            KernelSpec::Sobolev1Dirichlet { axes, terms } => {
                if *axes == 0 || *terms == 0 {
                    return Err(invalid("sobolev1_dirichlet needs axes >= 1 and terms >= 1"));
                }
            }
            KernelSpec::SobolevTail { order } => {
                if *order == 0 {
                    return Err(invalid("sobolev_tail order must be >= 1"));
                }
            }
            KernelSpec::BrownianBridge { sigma2 } => {
                if !(*sigma2 > 0.0) {
                    return Err(invalid("brownian_bridge sigma2 must be positive"));
                }
            }
            KernelSpec::Exponential { length, axes } => {
                if !(*length > 0.0) || *axes == 0 {
                    return Err(invalid("exponential kernel needs length > 0 and axes >= 1"));
                }
            }
            KernelSpec::Product { factors } => {
                if factors.is_empty() {
                    return Err(invalid("product kernel needs at least one factor"));
                }
                let n = self.arity();
                let mut seen = alloc::vec![false; n];
                for f in factors {
                    f.kernel.validate()?;
                    if f.axes.len() != f.kernel.arity() {
                        return Err(invalid("product factor axes do not match its arity"));
                    }
                    for &a in &f.axes {
                        if a >= n || seen[a] {
                            return Err(invalid("product factor axes must partition the coordinates"));
                        }
                        seen[a] = true;
                    }
                }
            }
            KernelSpec::Symmetrized { inner, group_a, group_b } => {
                inner.validate()?;
                check_groups(inner.arity(), group_a, group_b)?;
            }
            KernelSpec::Causal { inner, t_axis, s_axis, .. } => {
                inner.validate()?;
                let n = inner.arity();
                if *t_axis >= n || *s_axis >= n || t_axis == s_axis {
                    return Err(invalid("causal time axes out of range"));
                }
            }
            KernelSpec::Convolutional { base } => base.validate()?,
        }
        Ok(())
    }

    /// Pointwise value; argument lengths are not checked.
    pub(crate) fn value(&self, p: &[f64], q: &[f64]) -> f64 {
        match self {
            KernelSpec::Gaussian { variances } => variances
                .iter()
                .enumerate()
                .map(|(a, &v)| gauss1(p[a] - q[a], v))
                .product(),
            KernelSpec::Sobolev1Dirichlet { axes, terms } => sobolev1_value(*axes, *terms, p, q),
            KernelSpec::SobolevTail { order } => tail_kernel(*order, p[0], q[0]),
            KernelSpec::BrownianBridge { sigma2 } => sigma2 * (p[0].min(q[0]) - p[0] * q[0]),
            KernelSpec::Exponential { length, axes } => {
                let d2: f64 = (0..*axes).map(|a| (p[a] - q[a]) * (p[a] - q[a])).sum();
                libm::exp(-libm::sqrt(d2) / length)
            }
            KernelSpec::Product { factors } => {
                let mut acc = 1.0;
                let mut ps = Vec::new();
                let mut qs = Vec::new();
                for f in factors {
                    ps.clear();
                    qs.clear();
                    ps.extend(f.axes.iter().map(|&a| p[a]));
                    qs.extend(f.axes.iter().map(|&a| q[a]));
                    acc *= f.kernel.value(&ps, &qs);
                }
                acc
            }
            KernelSpec::Symmetrized { inner, group_a, group_b } => {
                let sp = swap(p, group_a, group_b);
                let sq = swap(q, group_a, group_b);
                0.25 * (inner.value(p, q) + inner.value(p, &sq) + inner.value(&sp, q) + inner.value(&sp, &sq))
            }
            KernelSpec::Causal {
                inner,
                t_axis,
                s_axis,
                direction,
            } => {
                if direction.keeps(p[*t_axis], p[*s_axis]) && direction.keeps(q[*t_axis], q[*s_axis]) {
                    inner.value(p, q)
                } else {
                    0.0
                }
            }
            KernelSpec::Convolutional { base } => {
                let d = base.arity();
                let dp: Vec<f64> = (0..d).map(|a| p[d + a] - p[a]).collect();
                let dq: Vec<f64> = (0..d).map(|a| q[d + a] - q[a]).collect();
                base.value(&dp, &dq)
            }
        }
    }
}

impl Direction {
    #[inline]
    pub(crate) fn keeps(self, t: f64, s: f64) -> bool {
        match self {
            Direction::Causal => t <= s,
            Direction::Anticausal => t >= s,
        }
    }
}

/// Evaluate `spec` at the argument pair `(p, q)`.
pub fn eval_kernel(spec: &KernelSpec, p: &[f64], q: &[f64]) -> Result<f64> {
    let n = spec.arity();
    if p.len() != n || q.len() != n {
        return Err(invalid(format!(
            "kernel arity is {n} but arguments have lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(spec.value(p, q))
}

/// Dense cross-Gram matrix `K[i, j] = spec(rows[i], cols[j])`.
pub fn gram_cross<R: AsRef<[f64]> + Sync>(spec: &KernelSpec, rows: &[R], cols: &[R]) -> Result<DMatrix<f64>> {
    let n = spec.arity();
    if rows.iter().chain(cols).any(|r| r.as_ref().len() != n) {
        return Err(invalid(format!("gram_cross: every tuple must have {n} coordinates")));
    }
    let nr = rows.len();
    let nc = cols.len();
    let mut data = alloc::vec![0.0; nr * nc];
    // column-major: column j holds spec(rows[.], cols[j])
    let fill = |(j, col): (usize, &mut [f64])| {
        let q = cols[j].as_ref();
        for (i, v) in col.iter_mut().enumerate() {
            *v = spec.value(rows[i].as_ref(), q);
        }
    };
    if nr > 0 {
        #[cfg(feature = "std")]
        {
            use rayon::prelude::*;
            data.par_chunks_mut(nr).enumerate().for_each(fill);
        }
        #[cfg(not(feature = "std"))]
        data.chunks_mut(nr).enumerate().for_each(fill);
    }
    Ok(DMatrix::from_vec(nr, nc, data))
}

/// Average of `spec` over the swap of `group_a` with `group_b` in each argument.
///
/// The inner kernel must satisfy `K(sp, sq) = K(p, q)` for the swap `s`; this is
/// checked on 100 random argument pairs in the unit box.
pub fn symmetrize(spec: &KernelSpec, group_a: &[usize], group_b: &[usize]) -> Result<KernelSpec> {
    spec.validate()?;
    check_groups(spec.arity(), group_a, group_b)?;
    let n = spec.arity();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed_5e11);
    for _ in 0..100 {
        let p: Vec<f64> = (0..n).map(|_| unit(&mut rng)).collect();
        let q: Vec<f64> = (0..n).map(|_| unit(&mut rng)).collect();
        let a = spec.value(&p, &q);
        let b = spec.value(&swap(&p, group_a, group_b), &swap(&q, group_a, group_b));
        if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1e-300) {
            return Err(Error::SymmetryCondition(format!(
                "K(p,q) = {a} but K(sp,sq) = {b} at p = {p:?}, q = {q:?}"
            )));
        }
    }
    Ok(KernelSpec::Symmetrized {
        inner: Box::new(spec.clone()),
        group_a: group_a.to_vec(),
        group_b: group_b.to_vec(),
    })
}

/// Restrict a time-symmetrized kernel to causal (or anticausal) Green's functions.
///
/// `t_axis` is the impulse time (input side) and `s_axis` the response time.
pub fn causal_mask(spec: &KernelSpec, t_axis: usize, s_axis: usize, direction: Direction) -> Result<KernelSpec> {
    spec.validate()?;
    let n = spec.arity();
    if t_axis >= n || s_axis >= n || t_axis == s_axis {
        return Err(invalid("causal_mask: time axes out of range"));
    }
    if !symmetrized_in(spec, t_axis, s_axis) {
        return Err(invalid(format!(
            "causal_mask: kernel must first be symmetrized in the time pair ({t_axis}, {s_axis})"
        )));
    }
    Ok(KernelSpec::Causal {
        inner: Box::new(spec.clone()),
        t_axis,
        s_axis,
        direction,
    })
}

/// Convolutional Green's-function kernel `K(x, y, xi, eta) = base(y - x, eta - xi)`.
pub fn convolutional(base: &KernelSpec, input_dims: usize, output_dims: usize) -> Result<KernelSpec> {
    base.validate()?;
    if input_dims != output_dims {
        return Err(invalid(format!(
            "convolutional kernels need equal input and output dimensions, got {input_dims} and {output_dims}"
        )));
    }
    if base.arity() != input_dims {
        return Err(invalid("convolutional base kernel arity must equal the domain dimension"));
    }
    Ok(KernelSpec::Convolutional {
        base: Box::new(base.clone()),
    })
}

fn symmetrized_in(spec: &KernelSpec, t: usize, s: usize) -> bool {
    match spec {
        KernelSpec::Symmetrized { inner, group_a, group_b } => {
            group_a
                .iter()
                .zip(group_b)
                .any(|(&a, &b)| (a == t && b == s) || (a == s && b == t))
                || symmetrized_in(inner, t, s)
        }
        _ => false,
    }
}

fn check_groups(n: usize, a: &[usize], b: &[usize]) -> Result<()> {
    if a.is_empty() || a.len() != b.len() {
        return Err(invalid("symmetrization groups must be nonempty and of equal length"));
    }
    let mut seen = alloc::vec![false; n];
    for &i in a.iter().chain(b) {
        if i >= n || seen[i] {
            return Err(invalid("symmetrization groups must be disjoint axis indices within arity"));
        }
        seen[i] = true;
    }
    Ok(())
}

pub(crate) fn swap(p: &[f64], a: &[usize], b: &[usize]) -> Vec<f64> {
    let mut out = p.to_vec();
    for (&i, &j) in a.iter().zip(b) {
        out.swap(i, j);
    }
    out
}

fn unit(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

#[inline]
pub(crate) fn gauss1(d: f64, var: f64) -> f64 {
    libm::exp(-0.5 * d * d / var) / libm::sqrt(2.0 * PI * var)
}

/// `int_0^1 G_m(x,z) G_m(y,z) dz` with `G_m(x,z) = (x-z)_+^{m-1} / (m-1)!`.
///
/// With `a = min(x,y)`, `b = max(x,y)` and `(b-z) = (b-a) + (a-z)` the integral is
/// `sum_j C(m-1, j) (b-a)^{m-1-j} a^{m+j} / (m+j)`, divided by `((m-1)!)^2`.
pub(crate) fn tail_kernel(order: u32, x: f64, y: f64) -> f64 {
    let a = x.min(y).max(0.0);
    let b = x.max(y).max(0.0);
    let m = order as i32;
    if m == 1 {
        return a;
    }
    let mut sum = 0.0;
    let mut binom = 1.0;
    for j in 0..m {
        sum += binom * libm::pow(b - a, (m - 1 - j) as f64) * libm::pow(a, (m + j) as f64) / (m + j) as f64;
        binom = binom * (m - 1 - j) as f64 / (j + 1) as f64;
    }
    let mut fact = 1.0;
    for k in 1..m {
        fact *= k as f64;
    }
    sum / (fact * fact)
}

fn sobolev1_value(axes: usize, terms: usize, p: &[f64], q: &[f64]) -> f64 {
    // per-axis products sin(pi k p_a) sin(pi k q_a)
    let mut prods = alloc::vec![0.0; axes * terms];
    for a in 0..axes {
        for k in 1..=terms {
            let kf = k as f64 * PI;
            prods[a * terms + k - 1] = libm::sin(kf * p[a]) * libm::sin(kf * q[a]);
        }
    }
    let mut idx = alloc::vec![0usize; axes];
    let mut total = 0.0;
    loop {
        let mut num = 1.0;
        let mut k2 = 0.0;
        for a in 0..axes {
            let k = idx[a];
            num *= prods[a * terms + k];
            k2 += ((k + 1) * (k + 1)) as f64;
        }
        total += num / k2;
        let mut a = axes;
        loop {
            if a == 0 {
                return libm::pow(2.0, axes as f64) * total / (PI * PI);
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] < terms {
                break;
            }
            idx[a] = 0;
        }
    }
}
