//! Element-wise slicers and the Gaussian-likelihood symbol posterior.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{invalid, Result};
use crate::grid_modem::Constellation;

/// Index of the nearest alphabet point; ties go to the lowest index.
pub fn ml_slice_index(x: Complex64, alphabet: &Constellation) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, a) in alphabet.points().iter().enumerate() {
        let d = (x - a).norm_sqr();
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Nearest alphabet point.
pub fn ml_slice(x: Complex64, alphabet: &Constellation) -> Complex64 {
    alphabet.points()[ml_slice_index(x, alphabet)]
}

/// Subtractive-dither slicer: `argmin_a |a - (x + d)| - d`.
pub fn dithered_ml_slice(x: Complex64, alphabet: &Constellation, d: Complex64) -> Complex64 {
    ml_slice(x + d, alphabet) - d
}

/// Draws a dither uniform over the square `[-delta, delta]^2`.
pub fn draw_dither<R: Rng + ?Sized>(rng: &mut R, delta: f64) -> Complex64 {
    let re = (2.0 * rng.random::<f64>() - 1.0) * delta;
    let im = (2.0 * rng.random::<f64>() - 1.0) * delta;
    Complex64::new(re, im)
}

/// Posterior mean and variance of a symbol observed as `x = a + noise` with
/// noise variance `var`, under a uniform prior: `Pr(a) ~ exp(-|x - a|^2 / var)`.
pub fn dd_posterior(x: Complex64, var: f64, alphabet: &Constellation) -> Result<(Complex64, f64)> {
    if !(var > 0.0) {
        return invalid(format!("posterior needs a positive variance, got {var}"));
    }
    let pts = alphabet.points();
    let mut logw: Vec<f64> = pts.iter().map(|a| -(x - a).norm_sqr() / var).collect();
    let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for w in logw.iter_mut() {
        *w = (*w - top).exp();
        total += *w;
    }
    let mean: Complex64 = pts.iter().zip(&logw).map(|(a, w)| a * (w / total)).sum();
    let post_var = pts
        .iter()
        .zip(&logw)
        .map(|(a, w)| (a - mean).norm_sqr() * (w / total))
        .sum();
    Ok((mean, post_var))
}
