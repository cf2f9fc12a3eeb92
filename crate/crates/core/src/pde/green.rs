//! Closed-form Green's functions used as oracles.

use core::f64::consts::PI;

use crate::error::{invalid, Result};

/// Operators with a known Green's function.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "type", rename_all = "snake_case"))]
pub enum GreenKind {
    /// `u'' = f` on `[0, 1]` with zero Dirichlet data; points are `x` and `y`.
    Poisson1d,
    /// `u_t - k u_xx = f` on the half line `x > 0` with `u(0, t) = 0`; points are `(x, t)` and `(y, s)`.
    HeatHalfline { k: f64 },
    /// `u'' + c u' + omega^2 u = f` started at rest; points are `t` and `s`.
    DampedOscillator { c: f64, omega: f64 },
}

fn arity(p: &[f64], q: &[f64], n: usize) -> Result<()> {
    if p.len() != n || q.len() != n {
        return Err(invalid("query points have the wrong dimension for this Green's function"));
    }
    Ok(())
}

/// `G(p, q)`: the response at `q` to a unit impulse at `p`.
pub fn analytic_green(kind: GreenKind, p: &[f64], q: &[f64]) -> Result<f64> {
    match kind {
        GreenKind::Poisson1d => {
            arity(p, q, 1)?;
            let (x, y) = (p[0], q[0]);
            Ok(-x.min(y) * (1.0 - x.max(y)))
        }
        GreenKind::HeatHalfline { k } => {
            arity(p, q, 2)?;
            if !(k > 0.0) {
                return Err(invalid("diffusivity must be positive"));
            }
            let (x, t, y, s) = (p[0], p[1], q[0], q[1]);
            if s <= t {
                return Ok(0.0);
            }
            let d = 4.0 * k * (s - t);
            let image = libm::exp(-(y - x) * (y - x) / d) - libm::exp(-(y + x) * (y + x) / d);
            Ok(image / libm::sqrt(PI * d))
        }
        GreenKind::DampedOscillator { c, omega } => {
            arity(p, q, 1)?;
            let disc = c * c - 4.0 * omega * omega;
            if disc.abs() <= 1e-12 * (c * c).max(omega * omega).max(1.0) {
                return Err(invalid("repeated characteristic roots (critical damping) are not supported"));
            }
            let tau = q[0] - p[0];
            if tau < 0.0 {
                return Ok(0.0);
            }
            let decay = libm::exp(-0.5 * c * tau);
            if disc > 0.0 {
                // (e^{r1 tau} - e^{r2 tau}) / (r1 - r2) with r1,2 = (-c +- sqrt(disc)) / 2
                let half = 0.5 * libm::sqrt(disc);
                Ok(decay * libm::sinh(half * tau) / half)
            } else {
                let beta = 0.5 * libm::sqrt(-disc);
                Ok(decay * libm::sin(beta * tau) / beta)
            }
        }
    }
}
