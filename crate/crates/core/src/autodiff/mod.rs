//! Minimal reverse-mode differentiation over dense matrices.

mod matrix;
mod tape;

pub use matrix::Matrix;
pub use tape::{Tape, Var};

/// Central finite-difference helpers shared by gradient tests.
#[doc(hidden)]
pub mod check {
    use super::Matrix;

    /// Relative error `|a - b| / max(|a|, |b|, floor)`.
    pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(floor)
    }

    /// Numerical gradient of `f` at `x` by central differences with step `h`.
    pub fn numeric_grad(x: &Matrix, h: f64, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
        let mut g = Matrix::zeros(x.rows(), x.cols());
        let mut probe = x.clone();
        for i in 0..x.data().len() {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let up = f(&probe);
            probe.data_mut()[i] = orig - h;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            g.data_mut()[i] = (up - down) / (2.0 * h);
        }
        g
    }

    /// Largest relative error between two gradients, entries compared against
    /// a floor proportional to the largest entry.
    pub fn max_rel_err(analytic: &Matrix, numeric: &Matrix) -> f64 {
        let scale = analytic
            .data()
            .iter()
            .chain(numeric.data())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
            .max(1e-12);
        analytic
            .data()
            .iter()
            .zip(numeric.data())
            .map(|(a, b)| rel_err(*a, *b, 1e-3 * scale))
            .fold(0.0, f64::max)
    }
}
