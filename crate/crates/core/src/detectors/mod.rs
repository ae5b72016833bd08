//! Iterative detectors under the cross-domain SIC schedule.
//!
//! Each iteration visits the data delay rows in order starting from `m_0`.
//! For a row `m` the `N` symbols `q = n_dot * M + m` are combined in the time
//! domain from their branch vectors, transformed to the DD domain with an
//! `N`-point DFT, sliced (or soft-estimated), transformed back and written
//! into the running state at once, so later rows of the same iteration
//! already cancel the new estimates.

pub mod combine;
pub mod slicer;

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rustfft::FftPlanner;

use crate::channel::GainTable;
use crate::error::{invalid, Error, Result};
use crate::grid_modem::{dd_to_time, Constellation, DdGrid, RowTransform, TimeSequence};
use crate::pilot::{EstimatedChannel, FrameLayout};

pub use combine::{mmse_combine, mrc_combine, scalar_mmse_filter, MmseOutput};
pub use slicer::{dd_posterior, dithered_ml_slice, draw_dither, ml_slice, ml_slice_index};

/// Detector family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DetectorKind {
    Mrc,
    MrcSd,
    HardSicMmse,
    SoftSicMmse,
    SsmiMrc,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 5] = [
        DetectorKind::Mrc,
        DetectorKind::MrcSd,
        DetectorKind::HardSicMmse,
        DetectorKind::SoftSicMmse,
        DetectorKind::SsmiMrc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Mrc => "mrc",
            DetectorKind::MrcSd => "mrc_sd",
            DetectorKind::HardSicMmse => "hard_sicmmse",
            DetectorKind::SoftSicMmse => "soft_sicmmse",
            DetectorKind::SsmiMrc => "ssmi_mrc",
        }
    }

    /// Combining stage used in iteration `i` (zero-based).
    pub fn stage(self, i: usize) -> Stage {
        match (self, i) {
            (DetectorKind::Mrc, _) => Stage::Mrc,
            (DetectorKind::MrcSd, _) => Stage::MrcDither,
            (DetectorKind::HardSicMmse, 0) => Stage::HardFirst,
            (DetectorKind::HardSicMmse, _) => Stage::HardScalar,
            (DetectorKind::SoftSicMmse, _) => Stage::Soft,
            (DetectorKind::SsmiMrc, 0) => Stage::Soft,
            (DetectorKind::SsmiMrc, _) => Stage::Mrc,
        }
    }

    pub fn default_init(self) -> InitMode {
        match self {
            DetectorKind::Mrc | DetectorKind::MrcSd => InitMode::FreqMmse,
            _ => InitMode::Zeros,
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        DetectorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown detector '{s}'")))
    }
}

/// How the first symbol estimates are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Zeros,
    /// Single-tap MMSE per multicarrier symbol (`N` blocks of `M` samples),
    /// regularized by noise plus the in-block tap variation.
    FreqMmse,
    /// Single-tap MMSE over the whole `MN`-point spectrum of the
    /// frame-averaged taps, regularized by noise only.
    FreqMmseGlobal,
}

impl InitMode {
    pub fn name(self) -> &'static str {
        match self {
            InitMode::Zeros => "zeros",
            InitMode::FreqMmse => "freq_mmse",
            InitMode::FreqMmseGlobal => "freq_mmse_global",
        }
    }
}

impl FromStr for InitMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zeros" => Ok(InitMode::Zeros),
            "freq_mmse" => Ok(InitMode::FreqMmse),
            "freq_mmse_global" => Ok(InitMode::FreqMmseGlobal),
            _ => invalid(format!("unknown init mode '{s}'")),
        }
    }
}

/// Per-symbol combining rule of one sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// MRC with plain slicing.
    Mrc,
    /// MRC with subtractive-dither slicing.
    MrcDither,
    /// MMSE with the scheduled hard covariance (first hard iteration).
    HardFirst,
    /// Own-symbol-only MMSE (later hard iterations).
    HardScalar,
    /// MMSE with soft variances and DD posterior estimates.
    Soft,
}

impl Stage {
    fn deterministic(self) -> bool {
        matches!(self, Stage::Mrc | Stage::HardScalar)
    }
}

/// Default dither bound as a fraction of `d_min`.
pub const DEFAULT_DITHER_RATIO: f64 = 9.4;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    pub n_ite: usize,
    pub m0: usize,
    /// Dither bound; `None` means `d_min / 9.4`.
    pub delta_d: Option<f64>,
    /// `None` selects the kind's default.
    pub init_mode: Option<InitMode>,
    /// Keep per-symbol combiner outputs for SINR measurement.
    pub record_trace: bool,
}

impl DetectorConfig {
    pub fn new(kind: DetectorKind, n_ite: usize) -> Self {
        DetectorConfig {
            kind,
            n_ite,
            m0: 0,
            delta_d: None,
            init_mode: None,
            record_trace: false,
        }
    }

    pub fn init_mode(&self) -> InitMode {
        self.init_mode.unwrap_or(self.kind.default_init())
    }

    pub fn dither_bound(&self, alphabet: &Constellation) -> f64 {
        self.delta_d
            .unwrap_or(alphabet.d_min() / DEFAULT_DITHER_RATIO)
    }

    pub fn validate(&self, m: usize, alphabet: &Constellation) -> Result<()> {
        if self.n_ite == 0 {
            return invalid("n_ite must be at least 1");
        }
        if self.m0 >= m {
            return invalid(format!("m0={} must be below M={m}", self.m0));
        }
        if self.kind == DetectorKind::MrcSd {
            let d = self.dither_bound(alphabet);
            if !(d > 0.0 && d < alphabet.d_min() / 2.0) {
                return invalid(format!("dither bound {d} must lie in (0, d_min/2)"));
            }
        }
        Ok(())
    }
}

/// Running estimates, residual `e = r - G_hat s_hat` and per-symbol error
/// variances.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolState {
    pub s_hat: Vec<Complex64>,
    pub residual: Vec<Complex64>,
    pub var: Vec<f64>,
    /// Last hard decision per DD cell (`[m * N + n]`), `u32::MAX` if none.
    pub decisions: Vec<u32>,
    pub iteration: usize,
}

impl SymbolState {
    /// Builds a state and its residual from scratch.
    pub fn new(r: &[Complex64], gains: &GainTable, s_hat: Vec<Complex64>, var: Vec<f64>) -> Self {
        let image = gains.apply(&s_hat);
        let residual = r.iter().zip(&image).map(|(a, b)| a - b).collect();
        let n = s_hat.len();
        SymbolState {
            s_hat,
            residual,
            var,
            decisions: vec![u32::MAX; n],
            iteration: 0,
        }
    }

    /// Replaces `s_hat[q]` and patches the `|L|` affected residual entries.
    /// Returns whether the value changed.
    pub fn update(
        &mut self,
        q: usize,
        value: Complex64,
        gains: &GainTable,
        support: &[usize],
    ) -> bool {
        let delta = value - self.s_hat[q];
        if delta == Complex64::new(0.0, 0.0) {
            return false;
        }
        let mn = self.s_hat.len();
        for &l in support {
            let t = (q + l) % mn;
            self.residual[t] -= gains.get(l, t) * delta;
        }
        self.s_hat[q] = value;
        true
    }

    /// `max |e - (r - G_hat s_hat)|`, recomputed from scratch.
    pub fn residual_drift(&self, r: &[Complex64], gains: &GainTable) -> f64 {
        let image = gains.apply(&self.s_hat);
        self.residual
            .iter()
            .zip(r.iter().zip(&image))
            .map(|(e, (a, b))| (e - (a - b)).norm())
            .fold(0.0, f64::max)
    }
}

/// Branch vector `r~_q[l] = e[q + l] + g_hat[l, q + l] s_hat[q]`.
pub fn stack_branches(state: &SymbolState, gains: &GainTable, q: usize) -> Vec<Complex64> {
    let mn = gains.mn();
    (0..=gains.l_max())
        .map(|l| {
            let t = (q + l) % mn;
            state.residual[t] + gains.get(l, t) * state.s_hat[q]
        })
        .collect()
}

fn known_time_samples(layout: &FrameLayout) -> Result<Vec<Complex64>> {
    Ok(dd_to_time(&layout.known_grid())?.into_vec())
}

/// Single-tap MMSE equalization of `r` in `blocks` consecutive segments.
///
/// Each segment is equalized against the spectrum of its time-averaged taps.
/// With `mismatch` set, the power of the taps' variation around that average
/// is added to the regularizer next to `sigma_z^2 / P_t`.
fn single_tap_mmse(
    r: &[Complex64],
    gains: &GainTable,
    sigma_z2: f64,
    p_t: f64,
    blocks: usize,
    mismatch: bool,
) -> Vec<Complex64> {
    let mn = gains.mn();
    let len = mn / blocks;
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let mut out = vec![Complex64::new(0.0, 0.0); mn];
    let mut h = vec![Complex64::new(0.0, 0.0); len];
    for b in 0..blocks {
        let span = b * len..(b + 1) * len;
        h.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        let mut spread = 0.0;
        for l in gains.support() {
            let row = &gains.row(l)[span.clone()];
            let avg = row.iter().sum::<Complex64>() / len as f64;
            spread += row.iter().map(|g| (g - avg).norm_sqr()).sum::<f64>() / len as f64;
            h[l % len] += avg;
        }
        fwd.process(&mut h);
        let mut spec = r[span.clone()].to_vec();
        fwd.process(&mut spec);
        let reg = sigma_z2 / p_t + if mismatch { spread } else { 0.0 };
        for (s, hf) in spec.iter_mut().zip(&h) {
            let den = hf.norm_sqr() + reg;
            *s = if den > 0.0 {
                hf.conj() * *s / den
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
        inv.process(&mut spec);
        for (o, v) in out[span].iter_mut().zip(&spec) {
            *o = v / len as f64;
        }
    }
    out
}

/// Initial state. Known (pilot and guard) rows are set exactly with zero
/// variance; data rows start at zero or at the frequency-domain MMSE
/// estimate, both with variance `P_t`.
pub fn init_estimates(
    r: &TimeSequence,
    est: &EstimatedChannel,
    layout: &FrameLayout,
    mode: InitMode,
    p_t: f64,
    sigma_z2: f64,
) -> Result<SymbolState> {
    let p = layout.params();
    let gains = est.gains();
    let known = known_time_samples(layout)?;
    let mut s_hat = known.clone();
    let mut var = vec![0.0; p.mn()];
    let guess = match mode {
        InitMode::Zeros => None,
        InitMode::FreqMmse => {
            let image = gains.apply(&known);
            let clean: Vec<Complex64> = r
                .as_slice()
                .iter()
                .zip(&image)
                .map(|(a, b)| a - b)
                .collect();
            Some(single_tap_mmse(&clean, gains, sigma_z2, p_t, p.n, true))
        }
        InitMode::FreqMmseGlobal => {
            let image = gains.apply(&known);
            let clean: Vec<Complex64> = r
                .as_slice()
                .iter()
                .zip(&image)
                .map(|(a, b)| a - b)
                .collect();
            Some(single_tap_mmse(&clean, gains, sigma_z2, p_t, 1, false))
        }
    };
    for m in layout.data_rows() {
        for nd in 0..p.n {
            let q = nd * p.m + m;
            var[q] = p_t;
            s_hat[q] = guess.as_ref().map_or(Complex64::new(0.0, 0.0), |g| g[q]);
        }
    }
    Ok(SymbolState::new(r.as_slice(), gains, s_hat, var))
}

/// Combiner output for one symbol, kept for SINR measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolOutput {
    pub q: usize,
    /// Bias-removed time-domain estimate `s~[q]`.
    pub estimate: Complex64,
    /// Real positive factor splitting `scale * estimate` into the signal
    /// `scale * s[q]` and the RIPN. `g^H g` for MRC and the scalar hard
    /// stage, `mu` for full MMSE filters.
    pub scale: f64,
    /// Unnormalized MMSE row (soft and scheduled-hard stages only).
    pub filter: Option<Vec<Complex64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub stage: Stage,
    pub symbols: Vec<SymbolOutput>,
}

/// Outcome of one sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    /// Whether any symbol estimate changed.
    pub changed: bool,
    pub trace: Option<IterationTrace>,
}

/// Shared per-frame context for sweeps.
pub struct Engine<'a> {
    gains: &'a GainTable,
    alphabet: &'a Constellation,
    schedule: Vec<usize>,
    support: Vec<usize>,
    transform: RowTransform,
    m: usize,
    n: usize,
    p_t: f64,
    sigma2: f64,
    delta_d: f64,
}

impl<'a> Engine<'a> {
    /// `sigma2` is the noise variance used inside MMSE filters; it is floored
    /// at `1e-12 * P_t` so noiseless frames stay solvable.
    pub fn new(
        gains: &'a GainTable,
        layout: &FrameLayout,
        alphabet: &'a Constellation,
        sigma2: f64,
        m0: usize,
        delta_d: f64,
    ) -> Self {
        let p = layout.params();
        let p_t = alphabet.power();
        let schedule = (0..p.m)
            .map(|dm| (m0 + dm) % p.m)
            .filter(|&m| layout.is_data_row(m))
            .collect();
        Engine {
            gains,
            alphabet,
            schedule,
            support: gains.support(),
            transform: RowTransform::new(p.n),
            m: p.m,
            n: p.n,
            p_t,
            sigma2: sigma2.max(1e-12 * p_t),
            delta_d,
        }
    }

    /// Prior variances for offsets `-l_max..=l_max` around `q`; the own
    /// symbol always counts as fully unknown.
    fn offset_variances(&self, state: &SymbolState, q: usize) -> Vec<f64> {
        let lm = self.gains.l_max() as i64;
        let mn = state.var.len() as i64;
        (-lm..=lm)
            .map(|dl| {
                if dl == 0 {
                    self.p_t
                } else {
                    state.var[(q as i64 + dl).rem_euclid(mn) as usize]
                }
            })
            .collect()
    }

    fn combine(
        &self,
        state: &SymbolState,
        q: usize,
        stage: Stage,
        keep_filter: bool,
    ) -> Result<(SymbolOutput, f64)> {
        let rt = stack_branches(state, self.gains, q);
        let g = self.gains.spreading_vector(q);
        let (w, mu) = match stage {
            Stage::Mrc | Stage::MrcDither => {
                let e: f64 = g.iter().map(|v| v.norm_sqr()).sum();
                let s = mrc_combine(&rt, &g)?;
                return Ok((
                    SymbolOutput {
                        q,
                        estimate: s,
                        scale: e,
                        filter: None,
                    },
                    0.0,
                ));
            }
            Stage::HardScalar => {
                let (w, mu) = scalar_mmse_filter(&g, self.sigma2, self.p_t)?;
                let e: f64 = g.iter().map(|v| v.norm_sqr()).sum();
                let out = combine::apply_filter(&rt, w, mu, self.p_t);
                return Ok((
                    SymbolOutput {
                        q,
                        estimate: out.estimate,
                        scale: e,
                        filter: None,
                    },
                    out.post_var,
                ));
            }
            Stage::HardFirst | Stage::Soft => {
                let v = self.offset_variances(state, q);
                let k =
                    combine::covariance_from_gains(self.gains, q, &v, self.sigma2, &self.support);
                combine::mmse_filter(k, &g, self.p_t)?
            }
        };
        let out = combine::apply_filter(&rt, w, mu, self.p_t);
        Ok((
            SymbolOutput {
                q,
                estimate: out.estimate,
                scale: out.mu,
                filter: keep_filter.then_some(out.filter),
            },
            out.post_var,
        ))
    }

    /// One pass over the data rows.
    pub fn sweep<R: Rng + ?Sized>(
        &self,
        state: &mut SymbolState,
        stage: Stage,
        rng: &mut R,
        record: bool,
    ) -> Result<SweepOutcome> {
        let (m_tot, n) = (self.m, self.n);
        let mut changed = false;
        let mut symbols = Vec::new();
        let mut row = vec![Complex64::new(0.0, 0.0); n];
        let mut post = vec![0.0; n];
        for &m in &self.schedule {
            for nd in 0..n {
                let q = nd * m_tot + m;
                let (out, pv) = self.combine(state, q, stage, record)?;
                row[nd] = out.estimate;
                post[nd] = pv;
                if record {
                    symbols.push(out);
                }
            }
            self.transform.dft(&mut row);
            let mut row_var = 0.0;
            if stage == Stage::Soft {
                let var_in = (post.iter().sum::<f64>() / n as f64).max(f64::MIN_POSITIVE);
                let mut acc = 0.0;
                for (k, x) in row.iter_mut().enumerate() {
                    state.decisions[m * n + k] = ml_slice_index(*x, self.alphabet) as u32;
                    let (mean, v) = dd_posterior(*x, var_in, self.alphabet)?;
                    *x = mean;
                    acc += v;
                }
                row_var = acc / n as f64;
            } else {
                for (k, x) in row.iter_mut().enumerate() {
                    let idx = ml_slice_index(*x, self.alphabet);
                    state.decisions[m * n + k] = idx as u32;
                    *x = if stage == Stage::MrcDither {
                        let d = draw_dither(rng, self.delta_d);
                        dithered_ml_slice(*x, self.alphabet, d)
                    } else {
                        self.alphabet.points()[idx]
                    };
                }
            }
            self.transform.idft(&mut row);
            for (nd, v) in row.iter().enumerate() {
                let q = nd * m_tot + m;
                changed |= state.update(q, *v, self.gains, &self.support);
                state.var[q] = row_var;
            }
        }
        state.iteration += 1;
        Ok(SweepOutcome {
            changed,
            trace: record.then_some(IterationTrace { stage, symbols }),
        })
    }
}

/// Ground truth for error accounting.
#[derive(Debug, Clone, Copy)]
pub struct Truth<'a> {
    pub x: &'a DdGrid,
    pub s: &'a TimeSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    /// Hard decisions on data cells, known values elsewhere.
    pub decisions: DdGrid,
    /// Alphabet index per data cell, in layout order.
    pub decision_indices: Vec<usize>,
    /// Iterations actually executed.
    pub iterations: usize,
    /// MSE of the data-row time estimates before the first iteration.
    pub init_mse: Option<f64>,
    /// Per-iteration MSE of the data-row time estimates (length `n_ite`,
    /// forward-filled after an early stop). Empty without truth.
    pub mse: Vec<f64>,
    /// Per-iteration bit errors over data cells. Empty without truth.
    pub bit_errors: Vec<u64>,
    /// Per-iteration symbol errors over data cells. Empty without truth.
    pub symbol_errors: Vec<u64>,
    pub traces: Vec<IterationTrace>,
    pub state: SymbolState,
}

impl DetectionResult {
    pub fn final_bit_errors(&self) -> Option<u64> {
        self.bit_errors.last().copied()
    }
}

fn data_mse(state: &SymbolState, truth: &TimeSequence, layout: &FrameLayout) -> f64 {
    let p = layout.params();
    let rows = layout.data_rows();
    let mut acc = 0.0;
    for &m in &rows {
        for nd in 0..p.n {
            let q = nd * p.m + m;
            acc += (state.s_hat[q] - truth.as_slice()[q]).norm_sqr();
        }
    }
    acc / (rows.len() * p.n).max(1) as f64
}

/// Runs a detector on one received frame.
#[allow(clippy::too_many_arguments)]
pub fn run_detector<R: Rng + ?Sized>(
    r: &TimeSequence,
    est: &EstimatedChannel,
    layout: &FrameLayout,
    cfg: &DetectorConfig,
    alphabet: &Constellation,
    sigma_z2: f64,
    rng: &mut R,
    truth: Option<Truth<'_>>,
) -> Result<DetectionResult> {
    let p = *layout.params();
    cfg.validate(p.m, alphabet)?;
    if r.len() != p.mn() || est.params().mn() != p.mn() || est.params().l_max != p.l_max {
        return invalid("received frame, estimate and layout disagree on dimensions");
    }
    if !(sigma_z2 >= 0.0) {
        return invalid("noise variance must be non-negative");
    }
    let p_t = alphabet.power();
    let mut state = init_estimates(r, est, layout, cfg.init_mode(), p_t, sigma_z2)?;
    let engine = Engine::new(
        est.gains(),
        layout,
        alphabet,
        sigma_z2,
        cfg.m0,
        cfg.dither_bound(alphabet),
    );
    let cells = layout.data_cells();
    let truth_idx: Option<Vec<usize>> = truth.map(|t| {
        cells
            .iter()
            .map(|&(m, n)| ml_slice_index(t.x.get(m, n), alphabet))
            .collect()
    });

    let mut res = DetectionResult {
        decisions: layout.known_grid(),
        decision_indices: Vec::new(),
        iterations: 0,
        init_mse: truth.map(|t| data_mse(&state, t.s, layout)),
        mse: Vec::new(),
        bit_errors: Vec::new(),
        symbol_errors: Vec::new(),
        traces: Vec::new(),
        state: state.clone(),
    };
    for i in 0..cfg.n_ite {
        let stage = cfg.kind.stage(i);
        let out = engine.sweep(&mut state, stage, rng, cfg.record_trace)?;
        res.iterations = i + 1;
        if let Some(tr) = out.trace {
            res.traces.push(tr);
        }
        if let (Some(t), Some(ti)) = (truth, &truth_idx) {
            res.mse.push(data_mse(&state, t.s, layout));
            let (mut bits, mut syms) = (0u64, 0u64);
            for (&(m, n), &want) in cells.iter().zip(ti) {
                let got = state.decisions[m * p.n + n] as usize;
                if got != want {
                    syms += 1;
                    bits += alphabet.bit_distance(got, want) as u64;
                }
            }
            res.bit_errors.push(bits);
            res.symbol_errors.push(syms);
        }
        let repeats = i + 1 < cfg.n_ite && cfg.kind.stage(i + 1) == stage;
        if !out.changed && stage.deterministic() && repeats {
            break;
        }
    }
    for v in [&mut res.mse] {
        if let Some(&last) = v.last() {
            v.resize(cfg.n_ite, last);
        }
    }
    for v in [&mut res.bit_errors, &mut res.symbol_errors] {
        if let Some(&last) = v.last() {
            v.resize(cfg.n_ite, last);
        }
    }
    res.decision_indices = cells
        .iter()
        .map(|&(m, n)| state.decisions[m * p.n + n] as usize)
        .collect();
    for (&(m, n), &idx) in cells.iter().zip(&res.decision_indices) {
        res.decisions.set(m, n, alphabet.points()[idx]);
    }
    res.state = state;
    Ok(res)
}

#[cfg(test)]
mod tests;
