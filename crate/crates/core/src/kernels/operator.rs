//! Kernel integral operators between tensor grids.
//!
//! `KernelOperator` maps a weight field on the input grid to
//! `(K W)(p) = sum_q K(p, q) W(q)` on the output grid. Weighting by quadrature is
//! left to the caller. Separable kernels are applied as per-axis matrix products,
//! the Dirichlet series kernel through its sine basis, and causal kernels as masks
//! around their inner operator, so that Gram matrices of size `m^2 x m^2` are
//! never formed for the space-time problems.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DMatrix;

use super::{gauss1, tail_kernel, Direction, KernelSpec};
use crate::error::{invalid, Result};
use crate::grid::{Axis, Grid};
use crate::tensor::{invert_perm, mode_product, permute, unravel};

/// Dense fallback limit on `out_len * in_len`.
const DENSE_LIMIT: usize = 30_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kern1 {
    Gauss(f64),
    Tail(u32),
    Bridge(f64),
    Exp(f64),
}

impl Kern1 {
    fn value(self, x: f64, y: f64) -> f64 {
        match self {
            Kern1::Gauss(v) => gauss1(x - y, v),
            Kern1::Tail(m) => tail_kernel(m, x, y),
            Kern1::Bridge(s2) => s2 * (x.min(y) - x * y),
            Kern1::Exp(l) => libm::exp(-(x - y).abs() / l),
        }
    }
}

/// `coef * prod_b k_b(p_b, q_{src_b})`.
#[derive(Debug, Clone)]
struct SymTerm {
    coef: f64,
    factors: Vec<(Kern1, usize)>,
}

fn symbolic(spec: &KernelSpec) -> Option<Vec<SymTerm>> {
    let single = |k: Kern1| {
        Some(vec![SymTerm {
            coef: 1.0,
            factors: vec![(k, 0)],
        }])
    };
    match spec {
        KernelSpec::Gaussian { variances } => Some(vec![SymTerm {
            coef: 1.0,
            factors: variances.iter().enumerate().map(|(a, &v)| (Kern1::Gauss(v), a)).collect(),
        }]),
        KernelSpec::SobolevTail { order } => single(Kern1::Tail(*order)),
        KernelSpec::BrownianBridge { sigma2 } => single(Kern1::Bridge(*sigma2)),
        KernelSpec::Exponential { length, axes: 1 } => single(Kern1::Exp(*length)),
        KernelSpec::Product { factors } => {
            let n = spec.arity();
            let placeholder = (Kern1::Gauss(1.0), usize::MAX);
            let mut acc = vec![SymTerm {
                coef: 1.0,
                factors: vec![placeholder; n],
            }];
            for f in factors {
                let terms = symbolic(&f.kernel)?;
                let mut next = Vec::with_capacity(acc.len() * terms.len());
                for t in &acc {
                    for s in &terms {
                        let mut u = t.clone();
                        u.coef *= s.coef;
                        for (j, &(k, src)) in s.factors.iter().enumerate() {
                            u.factors[f.axes[j]] = (k, f.axes[src]);
                        }
                        next.push(u);
                    }
                }
                acc = next;
            }
            Some(acc)
        }
        KernelSpec::Symmetrized { inner, group_a, group_b } => {
            let terms = symbolic(inner)?;
            let n = spec.arity();
            let mut sigma: Vec<usize> = (0..n).collect();
            for (&a, &b) in group_a.iter().zip(group_b) {
                sigma[a] = b;
                sigma[b] = a;
            }
            let mut out = Vec::with_capacity(4 * terms.len());
            for t in &terms {
                let f = &t.factors;
                // K(p,q), K(p,sq), K(sp,q), K(sp,sq)
                let variants: [Vec<(Kern1, usize)>; 4] = [
                    f.clone(),
                    f.iter().map(|&(k, s)| (k, sigma[s])).collect(),
                    (0..n).map(|c| f[sigma[c]]).collect(),
                    (0..n).map(|c| (f[sigma[c]].0, sigma[f[sigma[c]].1])).collect(),
                ];
                for factors in variants {
                    out.push(SymTerm {
                        coef: 0.25 * t.coef,
                        factors,
                    });
                }
            }
            Some(merge_terms(out))
        }
        _ => None,
    }
}

/// Combine terms with identical factor structure.
fn merge_terms(terms: Vec<SymTerm>) -> Vec<SymTerm> {
    let mut out: Vec<SymTerm> = Vec::new();
    for t in terms {
        if let Some(e) = out.iter_mut().find(|e| e.factors == t.factors) {
            e.coef += t.coef;
        } else {
            out.push(t);
        }
    }
    out
}

#[derive(Debug, Clone)]
struct SepTerm {
    coef: f64,
    src: Vec<usize>,
    mats: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
enum Node {
    Separable(Vec<SepTerm>),
    Spectral {
        /// `out_a x N` sine bases and their transposes on the input side.
        out_basis: Vec<DMatrix<f64>>,
        in_basis_t: Vec<DMatrix<f64>>,
        out_basis_t: Vec<DMatrix<f64>>,
        in_basis: Vec<DMatrix<f64>>,
        coeffs: Vec<f64>,
        terms: usize,
    },
    Masked {
        inner: Box<Node>,
        out_mask: Vec<f64>,
        in_mask: Vec<f64>,
    },
    Dense(DMatrix<f64>),
}

/// A kernel compiled against an (output, input) pair of tensor grids.
#[derive(Debug, Clone)]
pub struct KernelOperator {
    out_shape: Vec<usize>,
    in_shape: Vec<usize>,
    node: Node,
}

impl KernelOperator {
    /// Compile `spec` with arguments `p` ranging over `out` and `q` over `inp`.
    pub fn new(spec: &KernelSpec, out: &[Axis], inp: &[Axis]) -> Result<KernelOperator> {
        spec.validate()?;
        let n = spec.arity();
        if out.len() != n || inp.len() != n {
            return Err(invalid(format!(
                "kernel arity {n} does not match grid dimensions {} and {}",
                out.len(),
                inp.len()
            )));
        }
        Ok(KernelOperator {
            out_shape: out.iter().map(Axis::len).collect(),
            in_shape: inp.iter().map(Axis::len).collect(),
            node: compile(spec, out, inp)?,
        })
    }

    pub fn between(spec: &KernelSpec, out: &Grid, inp: &Grid) -> Result<KernelOperator> {
        KernelOperator::new(spec, out.axes(), inp.axes())
    }

    pub fn out_len(&self) -> usize {
        self.out_shape.iter().product()
    }

    pub fn in_len(&self) -> usize {
        self.in_shape.iter().product()
    }

    /// `(K w)(p) = sum_q K(p, q) w(q)`.
    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.in_len(), "weight field length");
        apply_node(&self.node, w, &self.in_shape, &self.out_shape, false)
    }

    /// `(K^T g)(q) = sum_p K(p, q) g(p)`.
    pub fn adjoint(&self, g: &[f64]) -> Vec<f64> {
        assert_eq!(g.len(), self.out_len(), "output field length");
        apply_node(&self.node, g, &self.out_shape, &self.in_shape, true)
    }

    /// The full `out_len x in_len` matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        if let Node::Dense(m) = &self.node {
            return m.clone();
        }
        let n = self.in_len();
        let mut m = DMatrix::zeros(self.out_len(), n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.apply(&e);
            m.column_mut(j).copy_from_slice(&col);
            e[j] = 0.0;
        }
        m
    }
}

fn compile(spec: &KernelSpec, out: &[Axis], inp: &[Axis]) -> Result<Node> {
    match spec {
        KernelSpec::Causal {
            inner,
            t_axis,
            s_axis,
            direction,
        } => Ok(Node::Masked {
            inner: Box::new(compile(inner, out, inp)?),
            out_mask: time_mask(out, *t_axis, *s_axis, *direction),
            in_mask: time_mask(inp, *t_axis, *s_axis, *direction),
        }),
        KernelSpec::Sobolev1Dirichlet { axes, terms } => {
            let basis = |ax: &Axis| {
                DMatrix::from_fn(ax.len(), *terms, |i, k| libm::sin(PI * (k + 1) as f64 * ax.coords[i]))
            };
            let out_basis: Vec<DMatrix<f64>> = out.iter().map(basis).collect();
            let in_basis: Vec<DMatrix<f64>> = inp.iter().map(basis).collect();
            let total = terms.pow(*axes as u32);
            let mut coeffs = Vec::with_capacity(total);
            let shape = vec![*terms; *axes];
            let mut idx = vec![0; *axes];
            let scale = libm::pow(2.0, *axes as f64) / (PI * PI);
            for i in 0..total {
                unravel(i, &shape, &mut idx);
                let k2: f64 = idx.iter().map(|&k| ((k + 1) * (k + 1)) as f64).sum();
                coeffs.push(scale / k2);
            }
            Ok(Node::Spectral {
                in_basis_t: in_basis.iter().map(|m| m.transpose()).collect(),
                out_basis_t: out_basis.iter().map(|m| m.transpose()).collect(),
                out_basis,
                in_basis,
                coeffs,
                terms: *terms,
            })
        }
        _ => {
            if let Some(terms) = symbolic(spec) {
                let sep = terms
                    .into_iter()
                    .filter(|t| t.coef != 0.0)
                    .map(|t| SepTerm {
                        coef: t.coef,
                        src: t.factors.iter().map(|f| f.1).collect(),
                        mats: t
                            .factors
                            .iter()
                            .enumerate()
                            .map(|(b, &(k, src))| {
                                DMatrix::from_fn(out[b].len(), inp[src].len(), |i, j| {
                                    k.value(out[b].coords[i], inp[src].coords[j])
                                })
                            })
                            .collect(),
                    })
                    .collect();
                Ok(Node::Separable(sep))
            } else {
                dense(spec, out, inp)
            }
        }
    }
}

fn time_mask(axes: &[Axis], t: usize, s: usize, dir: Direction) -> Vec<f64> {
    let shape: Vec<usize> = axes.iter().map(Axis::len).collect();
    let n: usize = shape.iter().product();
    let mut idx = vec![0; shape.len()];
    (0..n)
        .map(|i| {
            unravel(i, &shape, &mut idx);
            if dir.keeps(axes[t].coords[idx[t]], axes[s].coords[idx[s]]) {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

fn dense(spec: &KernelSpec, out: &[Axis], inp: &[Axis]) -> Result<Node> {
    let og = Grid::from_axes(out.to_vec());
    let ig = Grid::from_axes(inp.to_vec());
    let size = og.len().saturating_mul(ig.len());
    if size > DENSE_LIMIT {
        return Err(invalid(format!(
            "kernel has no separable structure and its dense operator would need {size} entries"
        )));
    }
    let rows: Vec<&[f64]> = og.points().collect();
    let cols: Vec<&[f64]> = ig.points().collect();
    Ok(Node::Dense(super::gram_cross(spec, &rows, &cols)?))
}

fn apply_node(node: &Node, x: &[f64], from: &[usize], to: &[usize], adjoint: bool) -> Vec<f64> {
    match node {
        Node::Dense(m) => {
            let v = nalgebra::DVectorView::from_slice(x, x.len());
            let r = if adjoint { m.tr_mul(&v) } else { m * v };
            r.as_slice().to_vec()
        }
        Node::Masked {
            inner,
            out_mask,
            in_mask,
        } => {
            let (pre, post) = if adjoint { (out_mask, in_mask) } else { (in_mask, out_mask) };
            let masked: Vec<f64> = x.iter().zip(pre).map(|(a, m)| a * m).collect();
            let mut y = apply_node(inner, &masked, from, to, adjoint);
            for (a, m) in y.iter_mut().zip(post) {
                *a *= m;
            }
            y
        }
        Node::Spectral {
            out_basis,
            in_basis_t,
            out_basis_t,
            in_basis,
            coeffs,
            terms,
        } => {
            let (down, up) = if adjoint {
                (out_basis_t, in_basis)
            } else {
                (in_basis_t, out_basis)
            };
            let mut shape = from.to_vec();
            let mut t = x.to_vec();
            for a in 0..shape.len() {
                t = mode_product(&t, &shape, a, &down[a]);
                shape[a] = *terms;
            }
            for (v, c) in t.iter_mut().zip(coeffs) {
                *v *= c;
            }
            for a in 0..shape.len() {
                t = mode_product(&t, &shape, a, &up[a]);
                shape[a] = to[a];
            }
            t
        }
        Node::Separable(terms) => {
            let n: usize = to.iter().product();
            let mut acc = vec![0.0; n];
            for term in terms {
                let t = if adjoint {
                    // contract output axes, then undo the axis permutation
                    let mut shape = from.to_vec();
                    let mut t = x.to_vec();
                    for (b, m) in term.mats.iter().enumerate() {
                        t = mode_product(&t, &shape, b, &m.transpose());
                        shape[b] = m.ncols();
                    }
                    permute(&t, &shape, &invert_perm(&term.src))
                } else {
                    let mut shape: Vec<usize> = term.src.iter().map(|&s| from[s]).collect();
                    let mut t = permute(x, from, &term.src);
                    for (b, m) in term.mats.iter().enumerate() {
                        t = mode_product(&t, &shape, b, m);
                        shape[b] = m.nrows();
                    }
                    t
                };
                for (a, v) in acc.iter_mut().zip(&t) {
                    *a += term.coef * v;
                }
            }
            acc
        }
    }
}
