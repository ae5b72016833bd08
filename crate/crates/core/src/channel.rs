//! Discrete doubly-selective channel with on-grid delay and Doppler taps.
//!
//! The production path is the per-sample relation
//! `r[q] = sum_l g[l,q] s[(q - l) mod MN] + z[q]`, where the time-varying tap
//! gain is `g[l,q] = sum_k h[l,k] exp(j 2 pi k (q - l) / MN)`. The dense
//! `MN x MN` matrix and the delay-Doppler domain relation are kept as
//! independent oracles.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::grid_modem::{DdGrid, ModemParams, TimeSequence};
use crate::linalg::CMatrix;

/// Default size cap for [`full_matrix`].
pub const DENSE_ORACLE_CAP: usize = 4096;

/// One on-grid propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdPath {
    pub delay: usize,
    pub doppler: i64,
    pub gain: Complex64,
}

impl DdPath {
    pub fn new(delay: usize, doppler: i64, gain: Complex64) -> Self {
        DdPath {
            delay,
            doppler,
            gain,
        }
    }
}

/// Power-delay profile plus the Doppler spread used for Jakes sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelProfile {
    /// `(delay index, linear power)`, powers summing to one.
    taps: Vec<(usize, f64)>,
    k_max: i64,
}

/// 3GPP EVA excess delays in nanoseconds.
pub const EVA_DELAYS_NS: [f64; 9] = [
    0.0, 30.0, 150.0, 310.0, 370.0, 710.0, 1090.0, 1730.0, 2510.0,
];
/// 3GPP EVA relative powers in dB.
pub const EVA_POWERS_DB: [f64; 9] = [0.0, -1.5, -1.4, -3.6, -0.6, -9.1, -7.0, -12.0, -16.9];

impl ChannelProfile {
    /// Builds a profile from `(delay, linear power)` taps; powers are
    /// normalized to unit sum.
    pub fn new(taps: Vec<(usize, f64)>, k_max: i64) -> Result<Self> {
        if taps.is_empty() {
            return invalid("channel profile has no taps");
        }
        if k_max < 0 {
            return invalid(format!("k_max must be non-negative, got {k_max}"));
        }
        if taps.iter().any(|(_, p)| !(p.is_finite() && *p > 0.0)) {
            return invalid("tap powers must be positive and finite");
        }
        let total: f64 = taps.iter().map(|(_, p)| p).sum();
        let taps = taps.into_iter().map(|(l, p)| (l, p / total)).collect();
        Ok(ChannelProfile { taps, k_max })
    }

    /// EVA profile quantized to the delay grid of `delay_resolution` seconds.
    pub fn eva(delay_resolution: f64, k_max: i64) -> Result<Self> {
        let taps = EVA_DELAYS_NS
            .iter()
            .zip(EVA_POWERS_DB)
            .map(|(d, p)| {
                let l = (d * 1e-9 / delay_resolution).round() as usize;
                (l, 10f64.powf(p / 10.0))
            })
            .collect();
        Self::new(taps, k_max)
    }

    /// Drops taps with delay above `l_max` and renormalizes.
    pub fn truncated(&self, l_max: usize) -> Result<Self> {
        Self::new(
            self.taps
                .iter()
                .copied()
                .filter(|(l, _)| *l <= l_max)
                .collect(),
            self.k_max,
        )
    }

    pub fn taps(&self) -> &[(usize, f64)] {
        &self.taps
    }

    pub fn delays(&self) -> Vec<usize> {
        self.taps.iter().map(|(l, _)| *l).collect()
    }

    pub fn k_max(&self) -> i64 {
        self.k_max
    }

    pub fn max_delay(&self) -> usize {
        self.taps.iter().map(|(l, _)| *l).max().unwrap_or(0)
    }
}

/// Maximum Doppler index for a terminal speed (km/h) and carrier (Hz).
pub fn doppler_index_for_speed(params: &ModemParams, speed_kmh: f64, carrier_hz: f64) -> i64 {
    let nu_max = speed_kmh / 3.6 * carrier_hz / 299_792_458.0;
    (nu_max / params.doppler_resolution()).round() as i64
}

/// Draws a circularly-symmetric complex Gaussian with the given variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

/// `exp(j 2 pi t / len)` for `t = 0..len`.
#[derive(Debug, Clone)]
pub(crate) struct Twiddles {
    table: Vec<Complex64>,
}

impl Twiddles {
    pub(crate) fn new(len: usize) -> Self {
        Twiddles {
            table: (0..len)
                .map(|t| Complex64::from_polar(1.0, 2.0 * PI * t as f64 / len as f64))
                .collect(),
        }
    }

    #[inline]
    pub(crate) fn at(&self, t: i64) -> Complex64 {
        self.table[t.rem_euclid(self.table.len() as i64) as usize]
    }
}

/// Time-varying tap gains `g[l,q]` for `l = 0..=l_max`, `q = 0..MN`.
///
/// `support[l]` marks delay rows that may be nonzero; rows outside the
/// support are identically zero and skipped by the detectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GainTable {
    l_max: usize,
    mn: usize,
    data: Vec<Complex64>,
    support: Vec<bool>,
}

impl GainTable {
    pub fn zeros(l_max: usize, mn: usize) -> Self {
        GainTable {
            l_max,
            mn,
            data: vec![Complex64::new(0.0, 0.0); (l_max + 1) * mn],
            support: vec![false; l_max + 1],
        }
    }

    pub(crate) fn from_rows(
        l_max: usize,
        mn: usize,
        data: Vec<Complex64>,
        support: Vec<bool>,
    ) -> Self {
        debug_assert_eq!(data.len(), (l_max + 1) * mn);
        debug_assert_eq!(support.len(), l_max + 1);
        GainTable {
            l_max,
            mn,
            data,
            support,
        }
    }

    #[inline]
    pub fn get(&self, l: usize, q: usize) -> Complex64 {
        self.data[l * self.mn + q]
    }

    /// Gain row for delay `l` (length `MN`).
    pub fn row(&self, l: usize) -> &[Complex64] {
        &self.data[l * self.mn..(l + 1) * self.mn]
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn mn(&self) -> usize {
        self.mn
    }

    pub fn in_support(&self, l: usize) -> bool {
        self.support[l]
    }

    /// Delays in the support, ascending.
    pub fn support(&self) -> Vec<usize> {
        (0..=self.l_max).filter(|&l| self.support[l]).collect()
    }

    /// Spreading vector `g_q = [g[0,q], g[1,q+1], ..., g[l_max,q+l_max]]`.
    pub fn spreading_vector(&self, q: usize) -> Vec<Complex64> {
        (0..=self.l_max)
            .map(|l| self.get(l, (q + l) % self.mn))
            .collect()
    }

    /// Applies the gains to a time sequence (noiseless).
    pub fn apply(&self, s: &[Complex64]) -> Vec<Complex64> {
        let mn = self.mn;
        let mut r = vec![Complex64::new(0.0, 0.0); mn];
        for l in self.support() {
            let row = self.row(l);
            for q in 0..mn {
                r[q] += row[q] * s[(q + mn - l) % mn];
            }
        }
        r
    }
}

/// Sub-channel of one symbol: `G_q` with columns `g_{q, dl}` for
/// `dl = -l_max..=l_max` (column index `dl + l_max`).
#[derive(Debug, Clone, PartialEq)]
pub struct SubChannel {
    pub q: usize,
    pub l_max: usize,
    pub matrix: CMatrix,
}

impl SubChannel {
    /// Builds `G_q` from a gain table. Entry `(l, dl)` is
    /// `g[l - dl, (q + l) mod MN]` when `l - dl` is a supported delay.
    pub fn from_gains(gains: &GainTable, q: usize) -> Self {
        let lm = gains.l_max();
        let mn = gains.mn();
        let mut matrix = CMatrix::zeros(lm + 1, 2 * lm + 1);
        for l in 0..=lm {
            let t = (q + l) % mn;
            for src in 0..=lm {
                if gains.in_support(src) {
                    // dl = l - src, column = dl + l_max
                    matrix[(l, l + lm - src)] = gains.get(src, t);
                }
            }
        }
        SubChannel {
            q,
            l_max: lm,
            matrix,
        }
    }

    /// Truncated spreading vector `g_{q, dl}`.
    pub fn column(&self, dl: i64) -> Vec<Complex64> {
        self.matrix.column((dl + self.l_max as i64) as usize)
    }

    /// `g_q = g_{q,0}`.
    pub fn spreading_vector(&self) -> Vec<Complex64> {
        self.column(0)
    }
}

/// Cyclic received slice `r_q = [r[q], ..., r[q + l_max]]`.
pub fn received_slice(r: &[Complex64], q: usize, l_max: usize) -> Vec<Complex64> {
    let mn = r.len();
    (0..=l_max).map(|l| r[(q + l) % mn]).collect()
}

/// Cyclic transmitted slice `s_q = [s[q - l_max], ..., s[q + l_max]]`.
pub fn transmitted_slice(s: &[Complex64], q: usize, l_max: usize) -> Vec<Complex64> {
    let mn = s.len() as i64;
    (-(l_max as i64)..=l_max as i64)
        .map(|dl| s[(q as i64 + dl).rem_euclid(mn) as usize])
        .collect()
}

/// One realization of the discrete channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteChannel {
    params: ModemParams,
    paths: Vec<DdPath>,
    k_max: i64,
}

impl DiscreteChannel {
    /// Validates that every path lies within `l_max = params.l_max` and
    /// `|k| <= k_max`.
    pub fn new(params: ModemParams, paths: Vec<DdPath>, k_max: i64) -> Result<Self> {
        params.validate()?;
        if k_max < 0 {
            return invalid("k_max must be non-negative");
        }
        for p in &paths {
            if p.delay > params.l_max {
                return invalid(format!(
                    "path delay {} exceeds l_max {}",
                    p.delay, params.l_max
                ));
            }
            if p.doppler.unsigned_abs() > k_max as u64 {
                return invalid(format!(
                    "path Doppler {} exceeds k_max {}",
                    p.doppler, k_max
                ));
            }
            if !(p.gain.re.is_finite() && p.gain.im.is_finite()) {
                return invalid("path gain is not finite");
            }
        }
        Ok(DiscreteChannel {
            params,
            paths,
            k_max,
        })
    }

    /// Single-path channel `(l=0, k=0, h=1)`.
    pub fn identity(params: ModemParams) -> Self {
        DiscreteChannel {
            params,
            paths: vec![DdPath::new(0, 0, Complex64::new(1.0, 0.0))],
            k_max: 0,
        }
    }

    pub fn params(&self) -> &ModemParams {
        &self.params
    }

    pub fn paths(&self) -> &[DdPath] {
        &self.paths
    }

    pub fn l_max(&self) -> usize {
        self.params.l_max
    }

    pub fn k_max(&self) -> i64 {
        self.k_max
    }

    /// Distinct delays carrying a path, ascending.
    pub fn delay_set(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.paths.iter().map(|p| p.delay).collect();
        d.sort_unstable();
        d.dedup();
        d
    }

    pub fn total_power(&self) -> f64 {
        self.paths.iter().map(|p| p.gain.norm_sqr()).sum()
    }

    /// Time-varying tap gain `g[l,q]`; zero when no path has delay `l`.
    pub fn time_gain(&self, l: usize, q: i64) -> Complex64 {
        let mn = self.params.mn() as f64;
        self.paths
            .iter()
            .filter(|p| p.delay == l)
            .map(|p| {
                let ph = 2.0 * PI * p.doppler as f64 * (q - l as i64) as f64 / mn;
                p.gain * Complex64::from_polar(1.0, ph)
            })
            .sum()
    }

    /// Precomputed `g[l,q]` for all `l <= l_max` and `q < MN`.
    pub fn gain_table(&self) -> GainTable {
        let mn = self.params.mn();
        let lm = self.params.l_max;
        let tw = Twiddles::new(mn);
        let mut data = vec![Complex64::new(0.0, 0.0); (lm + 1) * mn];
        let mut support = vec![false; lm + 1];
        for p in &self.paths {
            support[p.delay] = true;
            let row = &mut data[p.delay * mn..(p.delay + 1) * mn];
            for (q, g) in row.iter_mut().enumerate() {
                *g += p.gain * tw.at(p.doppler * (q as i64 - p.delay as i64));
            }
        }
        GainTable::from_rows(lm, mn, data, support)
    }

    pub fn subchannel(&self, q: usize) -> SubChannel {
        SubChannel::from_gains(&self.gain_table(), q)
    }

    /// Serializes as one `l k re im` line per path.
    pub fn to_text(&self) -> String {
        paths_to_text(&self.paths)
    }

    /// Parses the `l k re im` text format; `k_max` is taken from the data.
    pub fn from_text(params: ModemParams, text: &str) -> Result<Self> {
        let paths = parse_paths(text)?;
        let Some(k_max) = paths
            .iter()
            .map(|p| p.doppler.checked_abs())
            .try_fold(0, |m, k| k.map(|k| m.max(k)))
        else {
            return invalid("Doppler index out of range");
        };
        Self::new(params, paths, k_max)
    }
}

/// Draws one realization: one path per profile tap, Rayleigh gain with the
/// tap power as variance, on-grid Jakes Doppler `round(k_max cos theta)`.
pub fn sample_channel<R: Rng + ?Sized>(
    profile: &ChannelProfile,
    params: &ModemParams,
    rng: &mut R,
) -> Result<DiscreteChannel> {
    if profile.taps().is_empty() {
        return invalid("empty channel profile");
    }
    if profile.max_delay() > params.l_max {
        return invalid(format!(
            "profile delay {} exceeds l_max {}",
            profile.max_delay(),
            params.l_max
        ));
    }
    let k_max = profile.k_max();
    let paths = profile
        .taps()
        .iter()
        .map(|&(l, power)| {
            let gain = complex_gaussian(rng, power);
            let theta = rng.random::<f64>() * 2.0 * PI;
            let doppler = (k_max as f64 * theta.cos()).round() as i64;
            DdPath::new(l, doppler, gain)
        })
        .collect();
    DiscreteChannel::new(*params, paths, k_max)
}

/// `r[q] = sum_l g[l,q] s[(q-l) mod MN] + z[q]` with `z ~ CN(0, sigma_z^2)`.
pub fn apply_channel<R: Rng + ?Sized>(
    ch: &DiscreteChannel,
    s: &TimeSequence,
    sigma_z: f64,
    rng: &mut R,
) -> Result<TimeSequence> {
    let p = ch.params();
    if s.len() != p.mn() || s.params().mn() != p.mn() {
        return invalid(format!(
            "sequence length {} does not match MN={}",
            s.len(),
            p.mn()
        ));
    }
    if !(sigma_z >= 0.0) {
        return invalid(format!("noise std must be non-negative, got {sigma_z}"));
    }
    let mut r = apply_paths(ch, s.as_slice());
    if sigma_z > 0.0 {
        let var = sigma_z * sigma_z;
        for v in r.iter_mut() {
            *v += complex_gaussian(rng, var);
        }
    }
    TimeSequence::from_vec(*p, r)
}

fn apply_paths(ch: &DiscreteChannel, s: &[Complex64]) -> Vec<Complex64> {
    let mn = s.len();
    let tw = Twiddles::new(mn);
    let mut r = vec![Complex64::new(0.0, 0.0); mn];
    for p in ch.paths() {
        let l = p.delay;
        for (q, out) in r.iter_mut().enumerate() {
            let g = p.gain * tw.at(p.doppler * (q as i64 - l as i64));
            *out += g * s[(q + mn - l) % mn];
        }
    }
    r
}

/// Dense `MN x MN` channel matrix with `G[q, (q-l) mod MN] = g[l,q]`.
///
/// Test oracle only; refuses frames larger than [`DENSE_ORACLE_CAP`].
pub fn full_matrix(ch: &DiscreteChannel) -> Result<CMatrix> {
    full_matrix_capped(ch, DENSE_ORACLE_CAP)
}

pub fn full_matrix_capped(ch: &DiscreteChannel, cap: usize) -> Result<CMatrix> {
    let mn = ch.params().mn();
    if mn > cap {
        return Err(Error::OracleTooLarge { size: mn, cap });
    }
    let mut g = CMatrix::zeros(mn, mn);
    for l in ch.delay_set() {
        for q in 0..mn {
            g[(q, (q + mn - l) % mn)] = ch.time_gain(l, q as i64);
        }
    }
    Ok(g)
}

/// Noiseless delay-Doppler domain output, evaluated path by path with the
/// extra phase on rows that wrap through the cyclic prefix.
pub fn dd_reference_output(ch: &DiscreteChannel, x: &DdGrid) -> Result<DdGrid> {
    let p = *ch.params();
    if x.params().m != p.m || x.params().n != p.n {
        return invalid("grid dimensions do not match channel");
    }
    let (m_tot, n_tot) = (p.m as i64, p.n as i64);
    let mn = (p.m * p.n) as f64;
    let mut y = DdGrid::zeros(p);
    for path in ch.paths() {
        let l = path.delay as i64;
        let k = path.doppler;
        for m in 0..m_tot {
            let base = 2.0 * PI * ((m - l) * k) as f64 / mn;
            for n in 0..n_tot {
                let src_n = (n - k).rem_euclid(n_tot);
                let mut phase = base;
                if m < l {
                    phase -= 2.0 * PI * src_n as f64 / n_tot as f64;
                }
                let src = x.get((m - l).rem_euclid(m_tot) as usize, src_n as usize);
                let cur = y.get(m as usize, n as usize);
                y.set(
                    m as usize,
                    n as usize,
                    cur + path.gain * Complex64::from_polar(1.0, phase) * src,
                );
            }
        }
    }
    Ok(y)
}

/// Formats paths as `l k re im` lines.
pub fn paths_to_text(paths: &[DdPath]) -> String {
    let mut out = String::new();
    for p in paths {
        out.push_str(&format!(
            "{} {} {:e} {:e}\n",
            p.delay, p.doppler, p.gain.re, p.gain.im
        ));
    }
    out
}

/// Parses `l k re im` lines. Blank lines and `#` comments are skipped.
pub fn parse_paths(text: &str) -> Result<Vec<DdPath>> {
    let mut paths = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: &str| Error::Parse {
            line: i + 1,
            msg: msg.to_string(),
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(err("expected 4 fields: l k re im"));
        }
        let delay: usize = fields[0].parse().map_err(|_| err("bad delay index"))?;
        let doppler: i64 = fields[1].parse().map_err(|_| err("bad Doppler index"))?;
        let re: f64 = fields[2].parse().map_err(|_| err("bad real part"))?;
        let im: f64 = fields[3].parse().map_err(|_| err("bad imaginary part"))?;
        if !(re.is_finite() && im.is_finite()) {
            return Err(err("gain is not finite"));
        }
        paths.push(DdPath::new(delay, doppler, Complex64::new(re, im)));
    }
    Ok(paths)
}
