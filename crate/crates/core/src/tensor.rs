//! Dense row-major tensor helpers used by the structured kernel operators.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};

/// Multiply `mat` (`m_out x shape[axis]`) into `axis` of a row-major tensor.
pub(crate) fn mode_product(t: &[f64], shape: &[usize], axis: usize, mat: &DMatrix<f64>) -> Vec<f64> {
    let m = shape[axis];
    debug_assert_eq!(mat.ncols(), m);
    let m_out = mat.nrows();
    let pre: usize = shape[..axis].iter().product();
    let post: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; pre * m_out * post];
    if pre == 0 || post == 0 || m_out == 0 {
        return out;
    }
    if post == 1 {
        // Whole tensor is a (pre x m) row-major matrix, i.e. (m x pre) column-major.
        let src = DMatrixView::from_slice(t, m, pre);
        let mut dst = DMatrixViewMut::from_slice(&mut out, m_out, pre);
        dst.gemm(1.0, mat, &src, 0.0);
        return out;
    }
    let mat_t = mat.transpose();
    for (slab, out_slab) in t.chunks(m * post).zip(out.chunks_mut(m_out * post)) {
        let src = DMatrixView::from_slice(slab, post, m);
        let mut dst = DMatrixViewMut::from_slice(out_slab, post, m_out);
        dst.gemm(1.0, &src, &mat_t, 0.0);
    }
    out
}

/// Reorder axes so that output axis `b` is input axis `perm[b]`.
pub(crate) fn permute(t: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let d = shape.len();
    if perm.iter().enumerate().all(|(i, &p)| i == p) {
        return t.to_vec();
    }
    let mut in_strides = vec![1usize; d];
    for a in (0..d.saturating_sub(1)).rev() {
        in_strides[a] = in_strides[a + 1] * shape[a + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n: usize = shape.iter().product();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; d];
    let mut offset = 0usize;
    for _ in 0..n {
        out.push(t[offset]);
        for b in (0..d).rev() {
            idx[b] += 1;
            offset += strides[b];
            if idx[b] < out_shape[b] {
                break;
            }
            offset -= strides[b] * out_shape[b];
            idx[b] = 0;
        }
    }
    out
}

pub(crate) fn invert_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (b, &p) in perm.iter().enumerate() {
        inv[p] = b;
    }
    inv
}

/// Multi-index of a flat row-major position.
pub(crate) fn unravel(mut i: usize, shape: &[usize], out: &mut [usize]) {
    for a in (0..shape.len()).rev() {
        out[a] = i % shape[a];
        i /= shape[a];
    }
}
