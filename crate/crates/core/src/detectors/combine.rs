//! Per-symbol combiners: maximum-ratio and reduced-dimension MMSE.
//!
//! All filters act on the `(l_max + 1)`-branch vector `r~_q`. MMSE filters
//! are scaled so that the bias `mu = w g_q` lies in `(0, 1]` for any `P_t`.

use num_complex::Complex64;

use crate::channel::{GainTable, SubChannel};
use crate::error::{invalid, Error, Result};
use crate::linalg::{hpd_solve_in_place, CMatrix};

/// Output of an MMSE combiner.
#[derive(Debug, Clone, PartialEq)]
pub struct MmseOutput {
    /// Bias-removed estimate `w r~ / mu`.
    pub estimate: Complex64,
    /// Unnormalized output `w r~`.
    pub raw: Complex64,
    /// `mu = w g_q`.
    pub mu: f64,
    /// Post-MMSE variance `P_t (1 - mu) / mu`.
    pub post_var: f64,
    /// Filter row `w`.
    pub filter: Vec<Complex64>,
}

fn energy(g: &[Complex64]) -> f64 {
    g.iter().map(|v| v.norm_sqr()).sum()
}

fn inner(w: &[Complex64], r: &[Complex64]) -> Complex64 {
    w.iter().zip(r).map(|(a, b)| a * b).sum()
}

/// MRC row `w = g^H / (g^H g)`.
pub fn mrc_filter(g: &[Complex64]) -> Result<Vec<Complex64>> {
    let e = energy(g);
    if e == 0.0 {
        return Err(Error::DegenerateChannel);
    }
    Ok(g.iter().map(|v| v.conj() / e).collect())
}

/// `s~ = (g^H g)^{-1} g^H r~`.
pub fn mrc_combine(r_tilde: &[Complex64], g: &[Complex64]) -> Result<Complex64> {
    let e = energy(g);
    if e == 0.0 {
        return Err(Error::DegenerateChannel);
    }
    Ok(g.iter()
        .zip(r_tilde)
        .map(|(a, b)| a.conj() * b)
        .sum::<Complex64>()
        / e)
}

/// Interference-plus-noise covariance `G_q V G_q^H + sigma^2 I` from the
/// dense sub-channel matrix; `v[c]` is the variance of offset `c - l_max`.
pub fn covariance_from_subchannel(sub: &SubChannel, v: &[f64], sigma2: f64) -> CMatrix {
    let g = &sub.matrix;
    let (rows, cols) = (g.rows(), g.cols());
    let mut k = CMatrix::zeros(rows, rows);
    for i in 0..rows {
        for j in 0..rows {
            let mut s = Complex64::new(0.0, 0.0);
            for c in 0..cols {
                s += g[(i, c)] * v[c] * g[(j, c)].conj();
            }
            k[(i, j)] = s;
        }
        k[(i, i)] += sigma2;
    }
    k
}

/// Same covariance as [`covariance_from_subchannel`], assembled straight
/// from the gain table. Only the lower triangle is filled.
pub(crate) fn covariance_from_gains(
    gains: &GainTable,
    q: usize,
    v: &[f64],
    sigma2: f64,
    support: &[usize],
) -> CMatrix {
    let lm = gains.l_max();
    let mn = gains.mn();
    let mut k = CMatrix::zeros(lm + 1, lm + 1);
    // K[i,j] = sum_a v[i - a] g[a, q+i] conj(g[a + j - i, q+j]) over supported a, a + j - i
    for i in 0..=lm {
        let ti = (q + i) % mn;
        for j in 0..=i {
            let tj = (q + j) % mn;
            let mut s = Complex64::new(0.0, 0.0);
            for &b in support {
                // a = b + i - j
                let a = b + i - j;
                if a > lm || !gains.in_support(a) {
                    continue;
                }
                let vc = v[lm + i - a];
                if vc != 0.0 {
                    s += gains.get(a, ti) * gains.get(b, tj).conj() * vc;
                }
            }
            k[(i, j)] = s;
        }
        k[(i, i)] += sigma2;
    }
    k
}

/// Solves for the MMSE row `w = P_t g^H K^{-1}` and `mu = w g`.
pub fn mmse_filter(mut k: CMatrix, g: &[Complex64], p_t: f64) -> Result<(Vec<Complex64>, f64)> {
    let mut x = g.to_vec();
    hpd_solve_in_place(&mut k, &mut x)?;
    let w: Vec<Complex64> = x.iter().map(|v| v.conj() * p_t).collect();
    let mu = inner(&w, g).re;
    if !(mu > 0.0) {
        return Err(Error::DegenerateChannel);
    }
    Ok((w, mu))
}

/// Single-symbol filter for the case where only the own symbol is
/// uncertain: `w = P_t g^H / (P_t g^H g + sigma^2)`.
pub fn scalar_mmse_filter(g: &[Complex64], sigma2: f64, p_t: f64) -> Result<(Vec<Complex64>, f64)> {
    let e = energy(g);
    if e == 0.0 {
        return Err(Error::DegenerateChannel);
    }
    let denom = p_t * e + sigma2;
    let w = g.iter().map(|v| v.conj() * (p_t / denom)).collect();
    Ok((w, p_t * e / denom))
}

/// Applies a filter and removes its bias.
pub fn apply_filter(r_tilde: &[Complex64], w: Vec<Complex64>, mu: f64, p_t: f64) -> MmseOutput {
    let raw = inner(&w, r_tilde);
    MmseOutput {
        estimate: raw / mu,
        raw,
        mu,
        post_var: (p_t * (1.0 - mu) / mu).max(0.0),
        filter: w,
    }
}

/// MMSE combining against the sub-channel `G_q` with prior variances `v`
/// (one per offset `-l_max..=l_max`).
pub fn mmse_combine(
    r_tilde: &[Complex64],
    sub: &SubChannel,
    v: &[f64],
    sigma2: f64,
    p_t: f64,
) -> Result<MmseOutput> {
    let lm = sub.l_max;
    if v.len() != 2 * lm + 1 || r_tilde.len() != lm + 1 {
        return invalid("variance or branch vector has the wrong length");
    }
    if v.iter().any(|x| !(*x >= 0.0)) || !(v[lm] > 0.0) {
        return invalid("prior variances must be non-negative with a positive own-symbol entry");
    }
    if !(sigma2 >= 0.0) {
        return invalid("noise variance must be non-negative");
    }
    let k = covariance_from_subchannel(sub, v, sigma2);
    let (w, mu) = mmse_filter(k, &sub.spreading_vector(), p_t)?;
    Ok(apply_filter(r_tilde, w, mu, p_t))
}
