//! Discretized rectangular domains.
//!
//! Every grid in the crate is a tensor product of one-dimensional axes, stored both
//! as the factor axes (used by the structured kernel operators) and as the flattened
//! row-major list of points with per-point quadrature weights. All integrals are
//! weighted sums over these points.

use alloc::vec::Vec;

use crate::error::{invalid, Result};

/// One axis of a tensor grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub bounds: (f64, f64),
    pub coords: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Axis {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// A tensor-product grid with rectangle-rule quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    axes: Vec<Axis>,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

/// Closed interval, used for per-axis bounds.
pub type Interval = (f64, f64);

impl Grid {
    /// `m` equispaced points spanning `[a, b]` inclusive, each carrying weight `(b - a) / m`.
    pub fn uniform(bounds: Interval, m: usize) -> Result<Grid> {
        let (a, b) = bounds;
        if m < 2 {
            return Err(invalid("uniform grid needs at least 2 points"));
        }
        check_bounds(bounds)?;
        let h = (b - a) / (m - 1) as f64;
        let mut coords: Vec<f64> = (0..m).map(|i| a + h * i as f64).collect();
        coords[m - 1] = b;
        let w = (b - a) / m as f64;
        Ok(Grid::from_axes(alloc::vec![Axis {
            bounds,
            coords,
            weights: alloc::vec![w; m],
        }]))
    }

    /// `m` equispaced points on `[a, b)` with spacing and weight `(b - a) / m`.
    ///
    /// Used for closed curves such as the flattened boundary of the unit square.
    pub fn periodic(bounds: Interval, m: usize) -> Result<Grid> {
        let (a, b) = bounds;
        if m < 2 {
            return Err(invalid("periodic grid needs at least 2 points"));
        }
        check_bounds(bounds)?;
        let h = (b - a) / m as f64;
        Ok(Grid::from_axes(alloc::vec![Axis {
            bounds,
            coords: (0..m).map(|i| a + h * i as f64).collect(),
            weights: alloc::vec![h; m],
        }]))
    }

    /// Cartesian product of one-dimensional grids in row-major order.
    pub fn tensor(axes: &[Grid]) -> Result<Grid> {
        if axes.is_empty() {
            return Err(invalid("tensor grid needs at least one axis"));
        }
        let mut out = Vec::new();
        for g in axes {
            if g.dims() != 1 {
                return Err(invalid("tensor grid factors must be one-dimensional"));
            }
            out.push(g.axes[0].clone());
        }
        Ok(Grid::from_axes(out))
    }

    /// Product of grids of any dimension (axes are concatenated).
    pub fn product(a: &Grid, b: &Grid) -> Grid {
        let mut axes = a.axes.clone();
        axes.extend(b.axes.iter().cloned());
        Grid::from_axes(axes)
    }

    pub fn from_axes(axes: Vec<Axis>) -> Grid {
        let dims = axes.len();
        let shape: Vec<usize> = axes.iter().map(Axis::len).collect();
        let m: usize = shape.iter().product();
        let mut coords = Vec::with_capacity(m * dims);
        let mut weights = Vec::with_capacity(m);
        let mut idx = alloc::vec![0usize; dims];
        for _ in 0..m {
            let mut w = 1.0;
            for (d, ax) in axes.iter().enumerate() {
                coords.push(ax.coords[idx[d]]);
                w *= ax.weights[idx[d]];
            }
            weights.push(w);
            for d in (0..dims).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Grid {
            axes,
            coords,
            weights,
        }
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Axis::len).collect()
    }

    pub fn bounds(&self) -> Vec<Interval> {
        self.axes.iter().map(|a| a.bounds).collect()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dims();
        &self.coords[i * d..(i + 1) * d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks(self.dims())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Lebesgue measure of the bounding box.
    pub fn volume(&self) -> f64 {
        self.axes.iter().map(|a| a.bounds.1 - a.bounds.0).product()
    }

    /// Weighted sum of `values` over the grid.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    /// Weighted L2 inner product.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.weights)
            .map(|((x, y), w)| x * y * w)
            .sum()
    }

    pub fn norm_sq(&self, a: &[f64]) -> f64 {
        self.inner(a, a)
    }

    /// Evaluate `f` at every grid point.
    pub fn map<F: FnMut(&[f64]) -> f64>(&self, f: F) -> Vec<f64> {
        self.points().map(f).collect()
    }

    /// True when both grids cover the same box (within 1e-12 per endpoint).
    pub fn same_domain(&self, other: &Grid) -> bool {
        self.dims() == other.dims()
            && self.axes.iter().zip(&other.axes).all(|(a, b)| {
                (a.bounds.0 - b.bounds.0).abs() <= 1e-12 && (a.bounds.1 - b.bounds.1).abs() <= 1e-12
            })
    }

    /// Split the axes into a leading grid of `k` axes and a trailing grid of the rest.
    pub fn split_axes(&self, k: usize) -> (Grid, Grid) {
        (
            Grid::from_axes(self.axes[..k].to_vec()),
            Grid::from_axes(self.axes[k..].to_vec()),
        )
    }
}

fn check_bounds((a, b): Interval) -> Result<()> {
    if !(a.is_finite() && b.is_finite() && b > a) {
        return Err(invalid("grid bounds must be a finite interval with b > a"));
    }
    Ok(())
}

/// Written as `{dims, shape, bounds, points, weights}` with points as coordinate rows.
/// Per-axis weights cannot be recovered from the flattened ones, so there is no
/// matching `Deserialize`; rebuild grids from their description instead.
#[cfg(feature = "serde")]
impl serde::Serialize for Grid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let points: Vec<&[f64]> = self.points().collect();
        let mut st = s.serialize_struct("Grid", 5)?;
        st.serialize_field("dims", &self.dims())?;
        st.serialize_field("shape", &self.shape())?;
        st.serialize_field("bounds", &self.bounds())?;
        st.serialize_field("points", &points)?;
        st.serialize_field("weights", &self.weights)?;
        st.end()
    }
}
