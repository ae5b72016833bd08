//! Delay-Doppler grid, delay-time/time-domain transforms and square QAM.
//!
//! A frame is an `M x N` grid of delay-Doppler symbols. Each delay row is
//! mapped to the delay-time domain with a normalized `N`-point inverse DFT and
//! the resulting `M x N` delay-time grid is column-stacked into `MN` time
//! samples, so that sample `s[n_dot * M + m]` holds delay row `m`, time slot
//! `n_dot`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Error, Result};

/// Frame dimensions and timing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModemParams {
    /// Number of delay bins.
    pub m: usize,
    /// Number of Doppler bins.
    pub n: usize,
    /// Multicarrier symbol duration in seconds.
    pub t: f64,
    /// Maximum delay index, equal to the frame-wise CP length.
    pub l_max: usize,
}

impl ModemParams {
    pub fn new(m: usize, n: usize, t: f64, l_max: usize) -> Result<Self> {
        let p = ModemParams { m, n, t, l_max };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n < 2 {
            return invalid(format!(
                "need M >= 1 and N >= 2, got M={} N={}",
                self.m, self.n
            ));
        }
        if self.m.checked_mul(self.n).is_none() {
            return invalid(format!("M*N overflows, got M={} N={}", self.m, self.n));
        }
        if self.l_max > (self.m - 1) / 2 {
            return invalid(format!(
                "need M > 2*l_max, got M={} l_max={}",
                self.m, self.l_max
            ));
        }
        if !(self.t.is_finite() && self.t > 0.0) {
            return invalid(format!("symbol duration must be positive, got {}", self.t));
        }
        Ok(())
    }

    /// Number of time samples per frame.
    #[inline]
    pub fn mn(&self) -> usize {
        self.m * self.n
    }

    /// Delay resolution `T/M` in seconds.
    pub fn delay_resolution(&self) -> f64 {
        self.t / self.m as f64
    }

    /// Doppler resolution `1/(NT)` in hertz.
    pub fn doppler_resolution(&self) -> f64 {
        1.0 / (self.n as f64 * self.t)
    }
}

/// `M x N` delay-Doppler grid, stored row-major (`[m * N + n]`).
#[derive(Debug, Clone, PartialEq)]
pub struct DdGrid {
    params: ModemParams,
    data: Vec<Complex64>,
}

impl DdGrid {
    pub fn zeros(params: ModemParams) -> Self {
        DdGrid {
            params,
            data: vec![Complex64::new(0.0, 0.0); params.mn()],
        }
    }

    pub fn from_vec(params: ModemParams, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != params.mn() {
            return invalid(format!(
                "grid needs {} entries, got {}",
                params.mn(),
                data.len()
            ));
        }
        Ok(DdGrid { params, data })
    }

    pub fn params(&self) -> &ModemParams {
        &self.params
    }

    #[inline]
    pub fn get(&self, m: usize, n: usize) -> Complex64 {
        self.data[m * self.params.n + n]
    }

    #[inline]
    pub fn set(&mut self, m: usize, n: usize, v: Complex64) {
        self.data[m * self.params.n + n] = v;
    }

    /// Doppler row `m` (length `N`).
    pub fn row(&self, m: usize) -> &[Complex64] {
        let n = self.params.n;
        &self.data[m * n..(m + 1) * n]
    }

    pub fn row_mut(&mut self, m: usize) -> &mut [Complex64] {
        let n = self.params.n;
        &mut self.data[m * n..(m + 1) * n]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    /// Squared Frobenius norm.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|x| x.norm_sqr()).sum()
    }
}

/// `MN` time-domain samples of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSequence {
    params: ModemParams,
    samples: Vec<Complex64>,
}

impl TimeSequence {
    pub fn zeros(params: ModemParams) -> Self {
        TimeSequence {
            params,
            samples: vec![Complex64::new(0.0, 0.0); params.mn()],
        }
    }

    pub fn from_vec(params: ModemParams, samples: Vec<Complex64>) -> Result<Self> {
        if samples.len() != params.mn() {
            return invalid(format!(
                "sequence needs {} samples, got {}",
                params.mn(),
                samples.len()
            ));
        }
        Ok(TimeSequence { params, samples })
    }

    pub fn params(&self) -> &ModemParams {
        &self.params
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.samples
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples of delay row `m`: `s[n_dot * M + m]` for `n_dot = 0..N`.
    pub fn delay_slice(&self, m: usize) -> Vec<Complex64> {
        gather_row(&self.samples, self.params.m, self.params.n, m)
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x.norm_sqr()).sum()
    }
}

pub(crate) fn gather_row(
    samples: &[Complex64],
    m_total: usize,
    n: usize,
    m: usize,
) -> Vec<Complex64> {
    (0..n).map(|nd| samples[nd * m_total + m]).collect()
}

/// Normalized `N`-point DFT pair applied to one delay row at a time.
#[derive(Clone)]
pub struct RowTransform {
    n: usize,
    scale: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for RowTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RowTransform").field("n", &self.n).finish()
    }
}

impl RowTransform {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        RowTransform {
            n,
            scale: 1.0 / (n as f64).sqrt(),
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place unitary DFT (`F_N x`).
    pub fn dft(&self, buf: &mut [Complex64]) {
        self.forward.process(buf);
        buf.iter_mut().for_each(|x| *x *= self.scale);
    }

    /// In-place unitary inverse DFT (`F_N^H x`).
    pub fn idft(&self, buf: &mut [Complex64]) {
        self.inverse.process(buf);
        buf.iter_mut().for_each(|x| *x *= self.scale);
    }
}

/// Maps a delay-Doppler grid to the time domain (per-row IDFT, then
/// column-stacking).
pub fn dd_to_time(x: &DdGrid) -> Result<TimeSequence> {
    let p = *x.params();
    p.validate()?;
    if x.as_slice().len() != p.mn() {
        return Err(Error::InvalidInput("grid dimension mismatch".into()));
    }
    let tr = RowTransform::new(p.n);
    let mut out = vec![Complex64::new(0.0, 0.0); p.mn()];
    let mut buf = vec![Complex64::new(0.0, 0.0); p.n];
    for m in 0..p.m {
        buf.copy_from_slice(x.row(m));
        tr.idft(&mut buf);
        for (nd, v) in buf.iter().enumerate() {
            out[nd * p.m + m] = *v;
        }
    }
    TimeSequence::from_vec(p, out)
}

/// Inverse of [`dd_to_time`]: reshape to delay-time and apply a per-row DFT.
pub fn time_to_dd(r: &TimeSequence) -> Result<DdGrid> {
    let p = *r.params();
    p.validate()?;
    if r.len() != p.mn() {
        return Err(Error::InvalidInput("sequence length mismatch".into()));
    }
    let tr = RowTransform::new(p.n);
    let mut grid = DdGrid::zeros(p);
    for m in 0..p.m {
        let mut buf = r.delay_slice(m);
        tr.dft(&mut buf);
        grid.row_mut(m).copy_from_slice(&buf);
    }
    Ok(grid)
}

/// Gray-labeled square QAM alphabet with unit mean power.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<Complex64>,
    labels: Vec<u32>,
    bits_per_symbol: u32,
    d_min: f64,
    power: f64,
}

impl Constellation {
    /// Square QAM of the given order (4, 16 or 64), points ordered row-major
    /// over the lattice: index `row * side + col`, with I increasing along a
    /// row and Q increasing with the row.
    pub fn qam(order: usize) -> Result<Self> {
        let bits = match order {
            4 => 2u32,
            16 => 4,
            64 => 6,
            _ => return invalid(format!("unsupported QAM order {order}; use 4, 16 or 64")),
        };
        let side = 1usize << (bits / 2);
        let half_bits = bits / 2;
        // mean power of the odd-integer lattice {±1, ±3, ...}^2
        let raw_power = 2.0 * (order as f64 - 1.0) / 3.0;
        let scale = 1.0 / raw_power.sqrt();
        let mut points = Vec::with_capacity(order);
        let mut labels = Vec::with_capacity(order);
        for row in 0..side {
            for col in 0..side {
                let i = (2 * col) as f64 - (side - 1) as f64;
                let q = (2 * row) as f64 - (side - 1) as f64;
                points.push(Complex64::new(i * scale, q * scale));
                let gray = |v: usize| (v ^ (v >> 1)) as u32;
                labels.push((gray(col) << half_bits) | gray(row));
            }
        }
        let power = points.iter().map(|p| p.norm_sqr()).sum::<f64>() / order as f64;
        Ok(Constellation {
            points,
            labels,
            bits_per_symbol: bits,
            d_min: 2.0 * scale,
            power,
        })
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    /// Gray label of alphabet entry `idx`.
    pub fn label(&self, idx: usize) -> u32 {
        self.labels[idx]
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.bits_per_symbol
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    /// Mean symbol power `P_t`.
    pub fn power(&self) -> f64 {
        self.power
    }

    /// Number of differing label bits between two alphabet entries.
    pub fn bit_distance(&self, a: usize, b: usize) -> u32 {
        (self.labels[a] ^ self.labels[b]).count_ones()
    }

    /// Index of the point carrying `label`.
    pub fn index_of_label(&self, label: u32) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }
}

/// Convenience for [`Constellation::qam`].
pub fn make_constellation(order: usize) -> Result<Constellation> {
    Constellation::qam(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(m: usize, n: usize) -> ModemParams {
        ModemParams::new(m, n, 1e-3, 1).unwrap()
    }

    fn random_grid(p: ModemParams, rng: &mut impl Rng) -> DdGrid {
        let data = (0..p.mn())
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        DdGrid::from_vec(p, data).unwrap()
    }

    // explicit inverse DFT matrix, row by row
    fn idft_oracle(x: &DdGrid) -> Vec<Complex64> {
        let p = x.params();
        let mut s = vec![Complex64::new(0.0, 0.0); p.mn()];
        for m in 0..p.m {
            for nd in 0..p.n {
                let mut acc = Complex64::new(0.0, 0.0);
                for n in 0..p.n {
                    let ph = 2.0 * std::f64::consts::PI * (n * nd) as f64 / p.n as f64;
                    acc += x.get(m, n) * Complex64::from_polar(1.0, ph);
                }
                s[nd * p.m + m] = acc / (p.n as f64).sqrt();
            }
        }
        s
    }

    #[test]
    fn zero_grid_maps_to_zero() {
        let p = params(4, 4);
        let s = dd_to_time(&DdGrid::zeros(p)).unwrap();
        assert!(s.as_slice().iter().all(|v| v.norm() == 0.0));
        let y = time_to_dd(&TimeSequence::zeros(p)).unwrap();
        assert!(y.as_slice().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn unit_sample_at_origin_spreads_over_first_delay() {
        let p = params(4, 8);
        let mut x = DdGrid::zeros(p);
        x.set(0, 0, Complex64::new(1.0, 0.0));
        let s = dd_to_time(&x).unwrap();
        let v = 1.0 / (8f64).sqrt();
        for (q, s) in s.as_slice().iter().enumerate() {
            let want = if q % p.m == 0 { v } else { 0.0 };
            assert!((s - Complex64::new(want, 0.0)).norm() < 1e-15, "q={q}");
        }
    }

    #[test]
    fn time_unit_sample_maps_to_flat_doppler_row() {
        let p = params(4, 8);
        let m = 3;
        let mut r = TimeSequence::zeros(p);
        r.as_mut_slice()[m] = Complex64::new(1.0, 0.0);
        let y = time_to_dd(&r).unwrap();
        let v = 1.0 / (8f64).sqrt();
        for mm in 0..p.m {
            for n in 0..p.n {
                let want = if mm == m { v } else { 0.0 };
                assert!((y.get(mm, n) - Complex64::new(want, 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn matches_explicit_dft_matrix() {
        let p = params(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let x = random_grid(p, &mut rng);
            let s = dd_to_time(&x).unwrap();
            let want = idft_oracle(&x);
            for (a, b) in s.as_slice().iter().zip(&want) {
                assert!((a - b).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn rejects_bad_dimensions() {
        let p = params(4, 4);
        assert!(DdGrid::from_vec(p, vec![Complex64::new(0.0, 0.0); 15]).is_err());
        assert!(TimeSequence::from_vec(p, vec![Complex64::new(0.0, 0.0); 17]).is_err());
        assert!(ModemParams::new(4, 4, 1e-3, 2).is_err());
        assert!(ModemParams::new(8, 1, 1e-3, 1).is_err());
    }

    #[test]
    fn qam4_geometry() {
        let c = Constellation::qam(4).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let mut pts: Vec<_> = c.points().to_vec();
        pts.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).unwrap());
        for (p, (re, im)) in pts.iter().zip([(-s, -s), (-s, s), (s, -s), (s, s)]) {
            assert!((p.re - re).abs() < 1e-15 && (p.im - im).abs() < 1e-15);
        }
        assert!((c.d_min() - std::f64::consts::SQRT_2).abs() < 1e-15);
        assert!((c.power() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn qam16_normalization() {
        let c = Constellation::qam(16).unwrap();
        assert!((c.d_min() - 2.0 / 10f64.sqrt()).abs() < 1e-15);
        assert!((c.power() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn d_min_matches_brute_force() {
        for order in [4, 16, 64] {
            let c = Constellation::qam(order).unwrap();
            let pts = c.points();
            let mut best = f64::INFINITY;
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    best = best.min((pts[i] - pts[j]).norm());
                }
            }
            assert!((best - c.d_min()).abs() < 1e-12, "order {order}");
        }
    }

    #[test]
    fn gray_labels_differ_by_one_bit_between_neighbours() {
        for order in [4, 16, 64] {
            let c = Constellation::qam(order).unwrap();
            let pts = c.points();
            let mut seen = std::collections::HashSet::new();
            for i in 0..pts.len() {
                assert!(seen.insert(c.label(i)));
                for j in 0..pts.len() {
                    if ((pts[i] - pts[j]).norm() - c.d_min()).abs() < 1e-9 {
                        assert_eq!(c.bit_distance(i, j), 1);
                    }
                }
            }
        }
    }

    #[test]
    fn unsupported_order() {
        assert!(Constellation::qam(8).is_err());
        assert!(Constellation::qam(32).is_err());
    }
}
