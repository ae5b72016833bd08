//! Embedded-pilot frames, read-off channel estimation and the synthetic
//! Gaussian estimation-error model.
//!
//! The pilot sits at `(M/2, N/2)`. Every Doppler bin of the delay rows
//! `M/2 - l_max ..= M/2 + l_max` is reserved as guard, so the estimator's read
//! window `M/2 ..= M/2 + l_max` only ever sees the pilot plus noise.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rustfft::FftPlanner;

use crate::channel::{
    complex_gaussian, parse_paths, paths_to_text, DdPath, DiscreteChannel, GainTable,
};
use crate::error::{invalid, Error, Result};
use crate::grid_modem::{DdGrid, ModemParams};

/// Pilot position and amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PilotConfig {
    pub m_pilot: usize,
    pub n_pilot: usize,
    pub x_pilot: Complex64,
    pub l_max: usize,
}

impl PilotConfig {
    /// Pilot in the middle of the grid with the given amplitude.
    pub fn centered(params: &ModemParams, x_pilot: Complex64) -> Self {
        PilotConfig {
            m_pilot: params.m / 2,
            n_pilot: params.n / 2,
            x_pilot,
            l_max: params.l_max,
        }
    }

    /// Centered pilot with `|x_pilot|^2 = N * SNR_pilot * sigma_z^2`.
    pub fn from_pilot_snr(params: &ModemParams, snr_pilot_db: f64, sigma_z2: f64) -> Self {
        let p_dd = params.n as f64 * 10f64.powf(snr_pilot_db / 10.0) * sigma_z2;
        Self::centered(params, Complex64::new(p_dd.sqrt(), 0.0))
    }

    /// `P_pilot^DD = |x_pilot|^2`.
    pub fn power_dd(&self) -> f64 {
        self.x_pilot.norm_sqr()
    }

    /// Effective pilot power `P_pilot^DD / N` after spreading over `N` slots.
    pub fn effective_power(&self, n: usize) -> f64 {
        self.power_dd() / n as f64
    }

    /// Whether delay row `m` belongs to the guard band (pilot row included).
    pub fn is_guard_row(&self, m: usize) -> bool {
        m + self.l_max >= self.m_pilot && m <= self.m_pilot + self.l_max
    }
}

/// Which delay rows of a frame carry data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameLayout {
    params: ModemParams,
    pilot: Option<PilotConfig>,
}

impl FrameLayout {
    /// Every cell carries data.
    pub fn data_only(params: ModemParams) -> Self {
        FrameLayout {
            params,
            pilot: None,
        }
    }

    pub fn with_pilot(params: ModemParams, pilot: PilotConfig) -> Result<Self> {
        if pilot.m_pilot >= params.m || pilot.n_pilot >= params.n {
            return invalid("pilot position outside the grid");
        }
        if pilot.m_pilot < pilot.l_max || pilot.m_pilot + pilot.l_max >= params.m {
            return invalid("guard band does not fit in the grid");
        }
        Ok(FrameLayout {
            params,
            pilot: Some(pilot),
        })
    }

    pub fn params(&self) -> &ModemParams {
        &self.params
    }

    pub fn pilot(&self) -> Option<&PilotConfig> {
        self.pilot.as_ref()
    }

    pub fn is_data_row(&self, m: usize) -> bool {
        self.pilot.is_none_or(|p| !p.is_guard_row(m))
    }

    pub fn data_rows(&self) -> Vec<usize> {
        (0..self.params.m)
            .filter(|&m| self.is_data_row(m))
            .collect()
    }

    /// Data cells in row-major order.
    pub fn data_cells(&self) -> Vec<(usize, usize)> {
        self.data_rows()
            .into_iter()
            .flat_map(|m| (0..self.params.n).map(move |n| (m, n)))
            .collect()
    }

    pub fn n_data(&self) -> usize {
        self.data_rows().len() * self.params.n
    }

    /// Grid with the pilot and zero guards, data cells zero.
    pub fn known_grid(&self) -> DdGrid {
        let mut g = DdGrid::zeros(self.params);
        if let Some(p) = &self.pilot {
            g.set(p.m_pilot, p.n_pilot, p.x_pilot);
        }
        g
    }

    /// Places `data` on the data cells in row-major order.
    pub fn build_frame(&self, data: &[Complex64]) -> Result<DdGrid> {
        let cells = self.data_cells();
        if data.len() != cells.len() {
            return invalid(format!(
                "frame holds {} data symbols, got {}",
                cells.len(),
                data.len()
            ));
        }
        let mut g = self.known_grid();
        for (&(m, n), &v) in cells.iter().zip(data) {
            g.set(m, n, v);
        }
        Ok(g)
    }

    /// Reads the data cells back out of a grid.
    pub fn extract_data(&self, grid: &DdGrid) -> Vec<Complex64> {
        self.data_cells()
            .iter()
            .map(|&(m, n)| grid.get(m, n))
            .collect()
    }
}

/// Builds a pilot frame: pilot, zero guard band, data in row-major order.
pub fn embed_pilot(data: &[Complex64], cfg: &PilotConfig, params: &ModemParams) -> Result<DdGrid> {
    FrameLayout::with_pilot(*params, *cfg)?.build_frame(data)
}

/// Dense channel estimate over `l = 0..=l_max`, `k = -N/2..N/2-1`, with the
/// derived time-domain gain table.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedChannel {
    params: ModemParams,
    /// `[l * N + (k + N/2)]`
    taps: Vec<Complex64>,
    sigma_dg2: f64,
    gains: GainTable,
}

/// Doppler index range `k_lo..=k_hi` of the dense estimate.
pub fn doppler_range(n: usize) -> (i64, i64) {
    let half = (n / 2) as i64;
    (-half, n as i64 - half - 1)
}

impl EstimatedChannel {
    /// Builds an estimate from dense taps; gains are derived with one
    /// length-`MN` transform per delay row.
    pub fn from_taps(params: ModemParams, taps: Vec<Complex64>, sigma_dg2: f64) -> Result<Self> {
        if taps.len() != (params.l_max + 1) * params.n {
            return invalid(format!(
                "estimate needs {} taps, got {}",
                (params.l_max + 1) * params.n,
                taps.len()
            ));
        }
        if !(sigma_dg2 >= 0.0) {
            return invalid("error variance must be non-negative");
        }
        let gains = gains_from_taps(&params, &taps);
        Ok(EstimatedChannel {
            params,
            taps,
            sigma_dg2,
            gains,
        })
    }

    /// Perfect CSI: gains equal the true channel's, support restricted to
    /// the true delay set.
    pub fn perfect(ch: &DiscreteChannel) -> Result<Self> {
        let params = *ch.params();
        let taps = dense_taps(ch)?;
        Ok(EstimatedChannel {
            params,
            taps,
            sigma_dg2: 0.0,
            gains: ch.gain_table(),
        })
    }

    pub fn params(&self) -> &ModemParams {
        &self.params
    }

    /// `h_hat[l,k]` for `k` in [`doppler_range`].
    pub fn tap(&self, l: usize, k: i64) -> Complex64 {
        let n = self.params.n;
        self.taps[l * n + (k + (n / 2) as i64) as usize]
    }

    pub fn taps(&self) -> &[Complex64] {
        &self.taps
    }

    /// Time-domain error variance `sigma_dg^2` attached to this estimate.
    pub fn sigma_dg2(&self) -> f64 {
        self.sigma_dg2
    }

    pub fn gains(&self) -> &GainTable {
        &self.gains
    }

    /// Serializes every dense entry as an `l k re im` line.
    pub fn to_text(&self) -> String {
        let (lo, hi) = doppler_range(self.params.n);
        let paths: Vec<DdPath> = (0..=self.params.l_max)
            .flat_map(|l| (lo..=hi).map(move |k| (l, k)))
            .map(|(l, k)| DdPath::new(l, k, self.tap(l, k)))
            .collect();
        paths_to_text(&paths)
    }

    /// Parses `l k re im` lines into a dense estimate. Missing entries are
    /// zero; repeated entries are rejected.
    pub fn from_text(params: ModemParams, text: &str, sigma_dg2: f64) -> Result<Self> {
        params.validate()?;
        let (lo, hi) = doppler_range(params.n);
        let n = params.n;
        let mut taps = vec![Complex64::new(0.0, 0.0); (params.l_max + 1) * n];
        let mut seen = vec![false; taps.len()];
        for p in parse_paths(text)? {
            if p.delay > params.l_max || p.doppler < lo || p.doppler > hi {
                return invalid(format!(
                    "entry ({}, {}) outside the estimate support",
                    p.delay, p.doppler
                ));
            }
            let idx = p.delay * n + (p.doppler - lo) as usize;
            if seen[idx] {
                return invalid(format!("duplicate entry ({}, {})", p.delay, p.doppler));
            }
            seen[idx] = true;
            taps[idx] = p.gain;
        }
        Self::from_taps(params, taps, sigma_dg2)
    }
}

fn dense_taps(ch: &DiscreteChannel) -> Result<Vec<Complex64>> {
    let p = ch.params();
    let (lo, hi) = doppler_range(p.n);
    let mut taps = vec![Complex64::new(0.0, 0.0); (p.l_max + 1) * p.n];
    for path in ch.paths() {
        if path.doppler < lo || path.doppler > hi {
            return Err(Error::Unsupported(format!(
                "Doppler index {} outside the dense estimate range {lo}..={hi}",
                path.doppler
            )));
        }
        taps[path.delay * p.n + (path.doppler - lo) as usize] += path.gain;
    }
    Ok(taps)
}

/// `g_hat[l,q] = sum_k h_hat[l,k] exp(j 2 pi k (q - l) / MN)` for every
/// `l <= l_max`; all delay rows are in the support.
fn gains_from_taps(params: &ModemParams, taps: &[Complex64]) -> GainTable {
    let (mn, n, lm) = (params.mn(), params.n, params.l_max);
    let (lo, _) = doppler_range(n);
    let fft = FftPlanner::new().plan_fft_inverse(mn);
    let mut data = Vec::with_capacity((lm + 1) * mn);
    let mut buf = vec![Complex64::new(0.0, 0.0); mn];
    for l in 0..=lm {
        buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for (i, &h) in taps[l * n..(l + 1) * n].iter().enumerate() {
            let k = lo + i as i64;
            buf[k.rem_euclid(mn as i64) as usize] += h;
        }
        fft.process(&mut buf);
        data.extend((0..mn).map(|q| buf[(q + mn - l % mn) % mn]));
    }
    GainTable::from_rows(lm, mn, data, vec![true; lm + 1])
}

/// Gain table of a dense estimate (the estimate already carries it).
pub fn gains_from_estimate(est: &EstimatedChannel) -> &GainTable {
    est.gains()
}

/// Read-off estimate from a received DD grid:
/// `h_hat[l,k] = Y[m_p + l, n_p + k] / (x_p exp(j 2 pi m_p k / MN))`.
/// `sigma_dg^2` is recorded as `sigma_z^2 N / P_pilot^DD`.
pub fn estimate_channel(y: &DdGrid, cfg: &PilotConfig, sigma_z2: f64) -> Result<EstimatedChannel> {
    let p = *y.params();
    if cfg.power_dd() <= 0.0 {
        return invalid("pilot amplitude is zero");
    }
    if cfg.m_pilot + p.l_max >= p.m || cfg.n_pilot >= p.n {
        return invalid("pilot read window outside the grid");
    }
    let (lo, hi) = doppler_range(p.n);
    let mn = p.mn() as f64;
    let mut taps = Vec::with_capacity((p.l_max + 1) * p.n);
    for l in 0..=p.l_max {
        for k in lo..=hi {
            let n_idx = (cfg.n_pilot as i64 + k).rem_euclid(p.n as i64) as usize;
            let phase = 2.0 * PI * cfg.m_pilot as f64 * k as f64 / mn;
            let div = cfg.x_pilot * Complex64::from_polar(1.0, phase);
            taps.push(y.get(cfg.m_pilot + l, n_idx) / div);
        }
    }
    EstimatedChannel::from_taps(p, taps, sigma_z2 * p.n as f64 / cfg.power_dd())
}

/// Synthetic estimate `h_hat = h + dh` with i.i.d. `dh ~ CN(0, sigma2)` over
/// the full dense support. The attached `sigma_dg^2` is `N * sigma2`.
pub fn perturb_channel<R: Rng + ?Sized>(
    ch: &DiscreteChannel,
    sigma2: f64,
    rng: &mut R,
) -> Result<EstimatedChannel> {
    if !(sigma2 >= 0.0) {
        return invalid(format!(
            "perturbation variance must be non-negative, got {sigma2}"
        ));
    }
    let mut taps = dense_taps(ch)?;
    if sigma2 > 0.0 {
        for t in taps.iter_mut() {
            *t += complex_gaussian(rng, sigma2);
        }
    }
    EstimatedChannel::from_taps(*ch.params(), taps, sigma2 * ch.params().n as f64)
}
