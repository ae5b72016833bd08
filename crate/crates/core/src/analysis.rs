//! Closed-form post-equalization SINR, the SINR upper bound, empirical
//! SINR/MSE extraction and state-evolution BER prediction.
//!
//! All closed forms are conditional on one channel realization: they take the
//! true gain table and treat symbol and channel estimation errors as
//! independent zero-mean Gaussians of known variance.

use num_complex::Complex64;

use crate::channel::{GainTable, SubChannel};
use crate::detectors::combine::{covariance_from_gains, mmse_filter};
use crate::detectors::IterationTrace;
use crate::error::{invalid, Error, Result};
use crate::grid_modem::Constellation;

/// Reported value for an unbounded SINR.
pub const DEFAULT_SINR_CAP_DB: f64 = 300.0;

/// Length of a state-evolution trace.
pub const EVOLUTION_ITERATIONS: usize = 20;

const INNER_MAX_STEPS: usize = 200;

/// Error variances entering the SINR of iteration `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorState {
    /// `(sigma_e^2)^(i)`, applied to offsets `dl < 0`.
    pub sigma_e2_cur: f64,
    /// `(sigma_e^2)^(i-1)`, applied to offsets `dl > 0`.
    pub sigma_e2_prev: f64,
    /// Per-entry variance of the time-domain gain error.
    pub sigma_dg2: f64,
    pub p_t: f64,
    pub sigma_z2: f64,
}

impl ErrorState {
    pub fn new(
        sigma_e2_cur: f64,
        sigma_e2_prev: f64,
        sigma_dg2: f64,
        p_t: f64,
        sigma_z2: f64,
    ) -> Result<Self> {
        let s = ErrorState {
            sigma_e2_cur,
            sigma_e2_prev,
            sigma_dg2,
            p_t,
            sigma_z2,
        };
        s.validate()?;
        Ok(s)
    }

    /// No symbol or channel estimation error.
    pub fn ideal(p_t: f64, sigma_z2: f64) -> Self {
        ErrorState {
            sigma_e2_cur: 0.0,
            sigma_e2_prev: 0.0,
            sigma_dg2: 0.0,
            p_t,
            sigma_z2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.sigma_e2_cur,
            self.sigma_e2_prev,
            self.sigma_dg2,
            self.p_t,
            self.sigma_z2,
        ];
        if all.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return invalid("error state entries must be finite and non-negative");
        }
        if !(self.p_t > 0.0) {
            return invalid("P_t must be positive");
        }
        if self.sigma_e2_cur > self.p_t || self.sigma_e2_prev > self.p_t {
            return invalid("symbol error variance exceeds P_t");
        }
        Ok(())
    }

    /// Per-offset neighbour statistics with every neighbour a data symbol.
    pub fn neighbours(&self, l_max: usize) -> Neighbours {
        let lm = l_max as i64;
        let err = (-lm..=lm)
            .map(|dl| match dl.signum() {
                -1 => self.sigma_e2_cur,
                1 => self.sigma_e2_prev,
                _ => 0.0,
            })
            .collect();
        Neighbours {
            err,
            power: vec![self.p_t; 2 * l_max + 1],
        }
    }
}

/// Error variance and symbol power of the neighbours `q + dl`,
/// `dl = -l_max..=l_max` (index `dl + l_max`; the centre is ignored).
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbours {
    pub err: Vec<f64>,
    pub power: Vec<f64>,
}

/// Signal and residual-interference-plus-noise powers of one symbol.
///
/// For MRC, `ripn_terms` holds the four expectation terms of the RIPN power:
/// the true-gain term, the gain-error term, and the two self-interference
/// terms `P_t sigma^2 g^H g` and `P_t (l_max^2 + 3 l_max + 2) sigma^4`.
/// For soft SIC-MMSE it holds the noise term, the `dl < 0` term, the `dl > 0`
/// term and zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinrBreakdown {
    pub signal_power: f64,
    pub ripn_power: f64,
    pub ripn_terms: [f64; 4],
}

impl SinrBreakdown {
    pub fn sinr(&self) -> f64 {
        self.signal_power / self.ripn_power
    }

    pub fn sinr_db(&self, cap_db: f64) -> f64 {
        to_db_capped(self.sinr(), cap_db)
    }
}

/// `10 log10(x)`, with non-finite or oversized values reported as `cap_db`.
pub fn to_db_capped(x: f64, cap_db: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let db = 10.0 * x.log10();
    if !db.is_finite() && db > 0.0 || db > cap_db {
        cap_db
    } else {
        db
    }
}

fn dot_h(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn row_dot(w: &[Complex64], b: &[Complex64]) -> Complex64 {
    w.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// MRC SINR of symbol `q` from true gains and general neighbour statistics.
///
/// `Var(dg_{q,dl}[l]) = sigma_dg^2` when `0 <= l - dl <= l_max`, else 0.
pub fn mrc_breakdown(
    gains: &GainTable,
    q: usize,
    nb: &Neighbours,
    sigma_dg2: f64,
    p_t: f64,
    sigma_z2: f64,
) -> SinrBreakdown {
    let lm = gains.l_max();
    let sub = SubChannel::from_gains(gains, q);
    let g = sub.spreading_vector();
    let v: f64 = g.iter().map(|x| x.norm_sqr()).sum();
    let s2 = sigma_dg2;
    let s4 = s2 * s2;
    let lmf = lm as f64;

    let mut t1 = sigma_z2 * v;
    let mut t2 = (lmf + 1.0) * s2 * sigma_z2;
    for c in 0..=2 * lm {
        if c == lm {
            continue;
        }
        let (e, pw) = (nb.err[c], nb.power[c]);
        let dl = c as i64 - lm as i64;
        let col = sub.matrix.column(c);
        t1 += e * dot_h(&g, &col).norm_sqr();
        t2 += e * s2 * col.iter().map(|x| x.norm_sqr()).sum::<f64>();
        // rows l whose column entry carries a gain error
        for (l, gl) in g.iter().enumerate() {
            let src = l as i64 - dl;
            if (0..=lm as i64).contains(&src) {
                t1 += gl.norm_sqr() * s2 * (e + pw);
                t2 += s4 * (e + pw);
            }
        }
    }
    let t3 = p_t * s2 * v;
    let t4 = p_t * (lmf * lmf + 3.0 * lmf + 2.0) * s4;
    let signal = p_t
        * (v * v + 2.0 * (lmf + 1.0) * s2 * v + 2.0 * s2 * v + (lmf * lmf + 3.0 * lmf + 2.0) * s4);
    SinrBreakdown {
        signal_power: signal,
        ripn_power: t1 + t2 + t3 + t4,
        ripn_terms: [t1, t2, t3, t4],
    }
}

/// MRC (and hard SIC-MMSE from the second iteration) SINR of symbol `q`.
pub fn sinr_mrc(gains: &GainTable, errs: &ErrorState, q: usize) -> SinrBreakdown {
    let nb = errs.neighbours(gains.l_max());
    mrc_breakdown(gains, q, &nb, errs.sigma_dg2, errs.p_t, errs.sigma_z2)
}

/// Hard SIC-MMSE SINR for iterations after the first. The scalar filter is a
/// positive multiple of the MRC row, so this is the MRC expression.
pub fn sinr_hard(gains: &GainTable, errs: &ErrorState, q: usize) -> SinrBreakdown {
    sinr_mrc(gains, errs, q)
}

/// Soft SIC-MMSE SINR of symbol `q` for a given filter row `w` (perfect CSI).
pub fn soft_breakdown(
    gains: &GainTable,
    q: usize,
    w: &[Complex64],
    nb: &Neighbours,
    p_t: f64,
    sigma_z2: f64,
) -> SinrBreakdown {
    let lm = gains.l_max();
    let sub = SubChannel::from_gains(gains, q);
    let g = sub.spreading_vector();
    let signal = p_t * row_dot(w, &g).norm_sqr();
    let noise = sigma_z2 * w.iter().map(|x| x.norm_sqr()).sum::<f64>();
    let (mut before, mut after) = (0.0, 0.0);
    for c in 0..=2 * lm {
        let t = nb.err[c] * row_dot(w, &sub.matrix.column(c)).norm_sqr();
        if c < lm {
            before += t;
        } else if c > lm {
            after += t;
        }
    }
    SinrBreakdown {
        signal_power: signal,
        ripn_power: noise + before + after,
        ripn_terms: [noise, before, after, 0.0],
    }
}

/// Soft SIC-MMSE SINR with the filter given. Only perfect CSI is covered.
pub fn sinr_soft(
    gains: &GainTable,
    w: &[Complex64],
    errs: &ErrorState,
    q: usize,
) -> Result<SinrBreakdown> {
    if errs.sigma_dg2 > 0.0 {
        return Err(Error::Unsupported(
            "soft SIC-MMSE SINR is only defined without channel estimation error".into(),
        ));
    }
    if w.len() != gains.l_max() + 1 {
        return invalid("filter length must be l_max + 1");
    }
    let nb = errs.neighbours(gains.l_max());
    Ok(soft_breakdown(gains, q, w, &nb, errs.p_t, errs.sigma_z2))
}

/// Soft SIC-MMSE filter of symbol `q` with every neighbour at variance
/// `sigma_e2` and the own symbol at `P_t`.
pub fn soft_filter_uniform(
    gains: &GainTable,
    q: usize,
    sigma_e2: f64,
    p_t: f64,
    sigma_z2: f64,
) -> Result<Vec<Complex64>> {
    let lm = gains.l_max();
    let mut v = vec![sigma_e2; 2 * lm + 1];
    v[lm] = p_t;
    let noise = sigma_z2.max(1e-12 * p_t);
    let k = covariance_from_gains(gains, q, &v, noise, &gains.support());
    let (w, _) = mmse_filter(k, &gains.spreading_vector(q), p_t)?;
    Ok(w)
}

/// Shared SINR upper bound: the MRC expression with no symbol errors.
pub fn sinr_upper_bound(
    gains: &GainTable,
    sigma_dg2: f64,
    p_t: f64,
    sigma_z2: f64,
    q: usize,
) -> f64 {
    let errs = ErrorState {
        sigma_dg2,
        ..ErrorState::ideal(p_t, sigma_z2)
    };
    sinr_mrc(gains, &errs, q).sinr()
}

/// Arithmetic mean over all symbols of the upper bound.
pub fn mean_sinr_upper_bound(gains: &GainTable, sigma_dg2: f64, p_t: f64, sigma_z2: f64) -> f64 {
    let mn = gains.mn();
    (0..mn)
        .map(|q| sinr_upper_bound(gains, sigma_dg2, p_t, sigma_z2, q))
        .sum::<f64>()
        / mn as f64
}

/// Asymptotic MRC-SD SINR bound `P_t (g^H g)^2 / (eps_d^2 + sigma_z^2 g^H g)`
/// with `eps_d^2 = (delta_d^2 / 3) sum_{dl != 0} |g^H g_dl|^2`.
pub fn mrc_sd_sinr_bound(
    gains: &GainTable,
    q: usize,
    delta_d: f64,
    p_t: f64,
    sigma_z2: f64,
) -> f64 {
    let lm = gains.l_max();
    let sub = SubChannel::from_gains(gains, q);
    let g = sub.spreading_vector();
    let v: f64 = g.iter().map(|x| x.norm_sqr()).sum();
    let sigma_d2 = delta_d * delta_d / 3.0;
    let eps: f64 = (0..=2 * lm)
        .filter(|&c| c != lm)
        .map(|c| dot_h(&g, &sub.matrix.column(c)).norm_sqr())
        .sum::<f64>()
        * sigma_d2;
    p_t * v * v / (eps + sigma_z2 * v)
}

/// Gaussian tail probability.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// `(A - 1) Q(sqrt(sinr d_min^2 / (2 P_t)))`, clipped to `[0, 1]`.
pub fn ser_union_bound(sinr_mean: f64, alphabet: &Constellation) -> f64 {
    let a = alphabet.order() as f64;
    let d2 = alphabet.d_min() * alphabet.d_min();
    let arg = (sinr_mean.max(0.0) * d2 / (2.0 * alphabet.power())).sqrt();
    ((a - 1.0) * q_function(arg)).clamp(0.0, 1.0)
}

/// Which SINR expression drives the recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvolutionKind {
    /// MRC and hard SIC-MMSE.
    MrcHard,
    Soft,
}

impl EvolutionKind {
    pub fn name(self) -> &'static str {
        match self {
            EvolutionKind::MrcHard => "mrc_hard",
            EvolutionKind::Soft => "soft",
        }
    }
}

impl std::str::FromStr for EvolutionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mrc_hard" => Ok(EvolutionKind::MrcHard),
            "soft" => Ok(EvolutionKind::Soft),
            _ => invalid(format!("unknown evolution kind '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolutionStep {
    /// One-based iteration number.
    pub iteration: usize,
    pub sinr_mean: f64,
    pub ser: f64,
    pub mse: f64,
    pub ber: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionTrace {
    pub kind: EvolutionKind,
    pub steps: Vec<EvolutionStep>,
}

impl EvolutionTrace {
    pub fn converged_ber(&self) -> f64 {
        self.steps.last().map_or(f64::NAN, |s| s.ber)
    }
}

/// SINR of one symbol as a function of the two symbol-error variances:
/// `signal / (base + cur * sigma_e_cur + prev * sigma_e_prev)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolSinrModel {
    pub signal: f64,
    pub base: f64,
    pub cur: f64,
    pub prev: f64,
}

impl SymbolSinrModel {
    /// Reads the coefficients off a breakdown that is affine in the
    /// neighbour error variances.
    fn fit(eval: impl Fn(f64, f64) -> SinrBreakdown) -> Self {
        let b0 = eval(0.0, 0.0);
        let b1 = eval(1.0, 0.0);
        let b2 = eval(0.0, 1.0);
        SymbolSinrModel {
            signal: b0.signal_power,
            base: b0.ripn_power,
            cur: b1.ripn_power - b0.ripn_power,
            prev: b2.ripn_power - b0.ripn_power,
        }
    }

    pub fn sinr(&self, sigma_e2_cur: f64, sigma_e2_prev: f64) -> f64 {
        self.signal / (self.base + self.cur * sigma_e2_cur + self.prev * sigma_e2_prev)
    }
}

fn mrc_model(
    gains: &GainTable,
    q: usize,
    sigma_dg2: f64,
    p_t: f64,
    sigma_z2: f64,
) -> SymbolSinrModel {
    SymbolSinrModel::fit(|c, p| {
        let errs = ErrorState {
            sigma_e2_cur: c,
            sigma_e2_prev: p,
            sigma_dg2,
            p_t,
            sigma_z2,
        };
        sinr_mrc(gains, &errs, q)
    })
}

fn soft_model(
    gains: &GainTable,
    q: usize,
    w: &[Complex64],
    p_t: f64,
    sigma_z2: f64,
) -> SymbolSinrModel {
    SymbolSinrModel::fit(|c, p| {
        let nb = ErrorState {
            sigma_e2_cur: c,
            sigma_e2_prev: p,
            sigma_dg2: 0.0,
            p_t,
            sigma_z2,
        }
        .neighbours(gains.l_max());
        soft_breakdown(gains, q, w, &nb, p_t, sigma_z2)
    })
}

/// Per-symbol models of one iteration. For the soft kind the filters are
/// built from `sigma_e2_filter` on every neighbour.
pub fn symbol_models(
    gains: &GainTable,
    sigma_dg2: f64,
    p_t: f64,
    sigma_z2: f64,
    kind: EvolutionKind,
    sigma_e2_filter: f64,
) -> Result<Vec<SymbolSinrModel>> {
    (0..gains.mn())
        .map(|q| match kind {
            EvolutionKind::MrcHard => Ok(mrc_model(gains, q, sigma_dg2, p_t, sigma_z2)),
            EvolutionKind::Soft => {
                let w = soft_filter_uniform(gains, q, sigma_e2_filter, p_t, sigma_z2)?;
                Ok(soft_model(gains, q, &w, p_t, sigma_z2))
            }
        })
        .collect()
}

fn mean_model_sinr(models: &[SymbolSinrModel], cur: f64, prev: f64) -> f64 {
    models.iter().map(|m| m.sinr(cur, prev)).sum::<f64>() / models.len() as f64
}

/// Mean-over-`q` SINR of one iteration given its error state. For the soft
/// kind the filters are built from `sigma_e2_prev` on every neighbour.
pub fn mean_sinr(gains: &GainTable, errs: &ErrorState, kind: EvolutionKind) -> Result<f64> {
    if kind == EvolutionKind::Soft && errs.sigma_dg2 > 0.0 {
        return Err(Error::Unsupported(
            "soft SIC-MMSE SINR is only defined without channel estimation error".into(),
        ));
    }
    let models = symbol_models(
        gains,
        errs.sigma_dg2,
        errs.p_t,
        errs.sigma_z2,
        kind,
        errs.sigma_e2_prev,
    )?;
    Ok(mean_model_sinr(
        &models,
        errs.sigma_e2_cur,
        errs.sigma_e2_prev,
    ))
}

/// State-evolution recursion over [`EVOLUTION_ITERATIONS`] iterations,
/// starting from `(sigma_e^2)^(0) = P_t`.
///
/// Iteration `i` needs its own output variance for the `dl < 0` neighbours.
/// It is found as the fixed point of `sigma -> d_min^2 SER(SINR(sigma))`,
/// iterated from `(sigma_e^2)^(i-1)`.
pub fn state_evolution(
    gains: &GainTable,
    sigma_dg2: f64,
    sigma_z2: f64,
    alphabet: &Constellation,
    kind: EvolutionKind,
) -> Result<EvolutionTrace> {
    let p_t = alphabet.power();
    if kind == EvolutionKind::Soft && sigma_dg2 > 0.0 {
        return Err(Error::Unsupported(
            "soft state evolution is only defined without channel estimation error".into(),
        ));
    }
    ErrorState::new(0.0, 0.0, sigma_dg2, p_t, sigma_z2)?;
    let d2 = alphabet.d_min() * alphabet.d_min();
    let bits = alphabet.bits_per_symbol() as f64;
    let mut prev = p_t;
    let mut models = Vec::new();
    let mut steps = Vec::with_capacity(EVOLUTION_ITERATIONS);
    for i in 1..=EVOLUTION_ITERATIONS {
        if models.is_empty() || kind == EvolutionKind::Soft {
            models = symbol_models(gains, sigma_dg2, p_t, sigma_z2, kind, prev)?;
        }
        let mut cur = prev;
        let mut out = (0.0, 0.0);
        for _ in 0..INNER_MAX_STEPS {
            let sinr = mean_model_sinr(&models, cur, prev);
            let ser = ser_union_bound(sinr, alphabet);
            out = (sinr, ser);
            let next = (d2 * ser).min(p_t);
            let done = (next - cur).abs() <= 1e-12 * p_t.max(cur);
            cur = next;
            if done {
                break;
            }
        }
        let (sinr_mean, ser) = out;
        steps.push(EvolutionStep {
            iteration: i,
            sinr_mean,
            ser,
            mse: cur,
            ber: ser / bits,
        });
        prev = cur;
    }
    Ok(EvolutionTrace { kind, steps })
}

/// `mean |s_hat - s|^2`.
pub fn measure_mse(s_hat: &[Complex64], s: &[Complex64]) -> Result<f64> {
    if s_hat.len() != s.len() {
        return invalid(format!("length mismatch: {} vs {}", s_hat.len(), s.len()));
    }
    if s.is_empty() {
        return invalid("empty sequences");
    }
    Ok(s_hat
        .iter()
        .zip(s)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        / s.len() as f64)
}

/// Summed signal and RIPN powers of recorded combiner outputs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PowerSums {
    pub signal: f64,
    pub ripn: f64,
    pub count: usize,
}

impl PowerSums {
    pub fn add(&mut self, other: PowerSums) {
        self.signal += other.signal;
        self.ripn += other.ripn;
        self.count += other.count;
    }

    pub fn sinr(&self) -> f64 {
        if self.ripn == 0.0 {
            if self.signal > 0.0 {
                f64::INFINITY
            } else {
                f64::NAN
            }
        } else {
            self.signal / self.ripn
        }
    }

    pub fn sinr_db(&self, cap_db: f64) -> f64 {
        to_db_capped(self.sinr(), cap_db)
    }
}

/// Splits each recorded output `c_q s~[q]` into the signal `c_q s[q]` and the
/// RIPN `c_q (s~[q] - s[q])`, where `c_q` is the trace's scale (`g^H g` for
/// MRC, `mu` for MMSE), and sums both powers.
pub fn measure_sinr(trace: &IterationTrace, s: &[Complex64]) -> Result<PowerSums> {
    let mut out = PowerSums::default();
    for sym in &trace.symbols {
        let Some(&truth) = s.get(sym.q) else {
            return invalid(format!("trace symbol {} outside the sequence", sym.q));
        };
        out.signal += (sym.scale * truth).norm_sqr();
        out.ripn += (sym.scale * (sym.estimate - truth)).norm_sqr();
        out.count += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{complex_gaussian, sample_channel, ChannelProfile, DiscreteChannel};
    use crate::grid_modem::ModemParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn desk_gains(seed: u64) -> GainTable {
        let p = ModemParams::new(64, 16, 8.333e-6, 8).unwrap();
        let prof = ChannelProfile::eva(p.delay_resolution(), 3)
            .unwrap()
            .truncated(8)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_channel(&prof, &p, &mut rng).unwrap().gain_table()
    }

    #[test]
    fn ideal_state_is_matched_filter_bound() {
        let g = desk_gains(1);
        for q in [0, 17, 500, 1023] {
            let v: f64 = g.spreading_vector(q).iter().map(|x| x.norm_sqr()).sum();
            let b = sinr_mrc(&g, &ErrorState::ideal(1.0, 0.01), q);
            assert!((b.sinr() - v / 0.01).abs() < 1e-9 * v / 0.01);
            assert!((sinr_upper_bound(&g, 0.0, 1.0, 0.01, q) - b.sinr()).abs() < 1e-9 * b.sinr());
        }
    }

    #[test]
    fn soft_with_mrc_direction_is_matched_filter_bound() {
        let g = desk_gains(2);
        let q = 33;
        let w: Vec<Complex64> = g.spreading_vector(q).iter().map(|x| x.conj()).collect();
        let v: f64 = w.iter().map(|x| x.norm_sqr()).sum();
        let b = sinr_soft(&g, &w, &ErrorState::ideal(1.0, 0.05), q).unwrap();
        assert!((b.sinr() - v / 0.05).abs() < 1e-9 * v / 0.05);
        let bad = ErrorState {
            sigma_dg2: 1e-3,
            ..ErrorState::ideal(1.0, 0.05)
        };
        assert!(matches!(
            sinr_soft(&g, &w, &bad, q),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn union_bound_reference_values() {
        let a = Constellation::qam(4).unwrap();
        let d2 = a.d_min() * a.d_min();
        let ser = ser_union_bound(2.0 * a.power() / d2, &a);
        // 3 Q(1) = 3 * 0.15865525393145707
        assert!((ser - 0.475_965_761_794_371_2).abs() < 1e-12);
        assert_eq!(ser_union_bound(0.0, &a), 1.0);
        assert!(ser_union_bound(1e6, &a) < 1e-300);
    }

    #[test]
    fn mse_checks() {
        let s = vec![Complex64::new(1.0, 0.0); 4];
        assert_eq!(measure_mse(&s, &s).unwrap(), 0.0);
        assert!(measure_mse(&s, &s[..3]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noisy: Vec<Complex64> = (0..100_000)
            .map(|_| complex_gaussian(&mut rng, 1.0))
            .collect();
        let zero = vec![Complex64::new(0.0, 0.0); noisy.len()];
        assert!((measure_mse(&noisy, &zero).unwrap() - 1.0).abs() < 0.02);
    }

    #[test]
    fn capped_db() {
        assert_eq!(to_db_capped(f64::INFINITY, 300.0), 300.0);
        assert_eq!(to_db_capped(1e40, 300.0), 300.0);
        assert!((to_db_capped(100.0, 300.0) - 20.0).abs() < 1e-12);
        assert!(to_db_capped(0.0, 300.0).is_infinite());
    }

    /// Monte-Carlo oracle: draws the received branches of one MRC output
    /// under the error model and measures signal and RIPN powers directly.
    fn mc_mrc(g: &GainTable, q: usize, errs: &ErrorState, draws: usize, seed: u64) -> (f64, f64) {
        let lm = g.l_max();
        let sub = SubChannel::from_gains(g, q);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Constellation::qam(16).unwrap();
        let nb = errs.neighbours(lm);
        let (mut sp, mut np) = (0.0, 0.0);
        let sd = errs.sigma_dg2;
        for _ in 0..draws {
            let s: Vec<Complex64> = (0..=2 * lm)
                .map(|_| a.points()[rng.random_range(0..a.order())])
                .collect();
            let s_hat: Vec<Complex64> = s
                .iter()
                .zip(&nb.err)
                .map(|(x, &e)| x + complex_gaussian(&mut rng, e))
                .collect();
            let mut r_tilde = vec![Complex64::new(0.0, 0.0); lm + 1];
            let mut g_hat = vec![Complex64::new(0.0, 0.0); lm + 1];
            for l in 0..=lm {
                let mut acc = complex_gaussian(&mut rng, errs.sigma_z2);
                for c in 0..=2 * lm {
                    let dl = c as i64 - lm as i64;
                    let src = l as i64 - dl;
                    if !(0..=lm as i64).contains(&src) {
                        continue;
                    }
                    let gt = sub.matrix[(l, c)];
                    let gh = gt + complex_gaussian(&mut rng, sd);
                    acc += gt * s[c];
                    if c == lm {
                        g_hat[l] = gh;
                    } else {
                        acc -= gh * s_hat[c];
                    }
                }
                r_tilde[l] = acc;
            }
            let e: f64 = g_hat.iter().map(|x| x.norm_sqr()).sum();
            let out = dot_h(&g_hat, &r_tilde);
            let psi = e * s[lm];
            sp += psi.norm_sqr();
            np += (out - psi).norm_sqr();
        }
        (sp / draws as f64, np / draws as f64)
    }

    #[test]
    fn mrc_closed_form_matches_monte_carlo() {
        let g = desk_gains(4);
        let errs = ErrorState::new(0.05, 0.1, 0.02, 1.0, 0.03).unwrap();
        for q in [5, 700] {
            let b = sinr_mrc(&g, &errs, q);
            let (s, n) = mc_mrc(&g, q, &errs, 100_000, 10 + q as u64);
            assert!(
                (s / b.signal_power - 1.0).abs() < 0.02,
                "signal {s} vs {}",
                b.signal_power
            );
            assert!(
                (n / b.ripn_power - 1.0).abs() < 0.02,
                "ripn {n} vs {}",
                b.ripn_power
            );
        }
    }

    #[test]
    fn evolution_is_noise_free_limit() {
        let g = desk_gains(5);
        let a = Constellation::qam(4).unwrap();
        let tr = state_evolution(&g, 0.0, 1e-6, &a, EvolutionKind::MrcHard).unwrap();
        assert_eq!(tr.steps.len(), EVOLUTION_ITERATIONS);
        assert!(tr.converged_ber() < 1e-12);
        let soft = state_evolution(&g, 0.0, 1e-6, &a, EvolutionKind::Soft).unwrap();
        assert!(soft.converged_ber() < 1e-12);
        assert!(state_evolution(&g, 1e-3, 1e-2, &a, EvolutionKind::Soft).is_err());
    }

    #[test]
    fn bound_dominates_identity_channel_case() {
        let p = ModemParams::new(8, 4, 1e-4, 2).unwrap();
        let g = DiscreteChannel::identity(p).gain_table();
        let ub = sinr_upper_bound(&g, 0.0, 1.0, 0.1, 3);
        assert!((ub - 10.0).abs() < 1e-12);
        let errs = ErrorState::new(0.5, 0.5, 0.0, 1.0, 0.1).unwrap();
        assert!(sinr_mrc(&g, &errs, 3).sinr() <= ub);
    }
}
