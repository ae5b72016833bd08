//! Analysis runs: per-iteration SINR (simulated vs closed form), state
//! evolution traces and pilot-estimation error statistics.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::analysis::{
    measure_sinr, mrc_breakdown, sinr_upper_bound, soft_breakdown, state_evolution, to_db_capped,
    EvolutionKind, Neighbours, PowerSums, DEFAULT_SINR_CAP_DB, EVOLUTION_ITERATIONS,
};
use crate::channel::sample_channel;
use crate::detectors::{run_detector, DetectorKind, IterationTrace, Stage, Truth};
use crate::error::Result;
use crate::pilot::{doppler_range, FrameLayout};

use super::{frame_rng, noise_variance, Frame, PilotMode, RunContext};

/// One line of the SINR table.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrRow {
    pub snr_db: f64,
    pub detector: DetectorKind,
    /// One-based.
    pub iteration: usize,
    pub sinr_sim_db: f64,
    pub sinr_theory_db: f64,
}

/// Summed powers of one iteration over the traced symbols.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IterationPowers {
    pub sim: PowerSums,
    pub theory_signal: f64,
    pub theory_ripn: f64,
    /// Upper-bound powers, weighted per symbol like `sim`.
    pub bound_signal: f64,
    pub bound_ripn: f64,
}

impl IterationPowers {
    fn add(&mut self, o: &IterationPowers) {
        self.sim.add(o.sim);
        self.theory_signal += o.theory_signal;
        self.theory_ripn += o.theory_ripn;
        self.bound_signal += o.bound_signal;
        self.bound_ripn += o.bound_ripn;
    }

    pub fn theory_sinr(&self) -> f64 {
        self.theory_signal / self.theory_ripn
    }

    pub fn bound_sinr(&self) -> f64 {
        self.bound_signal / self.bound_ripn
    }
}

/// Per-delay-row symbol power of the known rows (zero for data rows).
fn known_row_power(layout: &FrameLayout) -> Vec<f64> {
    let g = layout.known_grid();
    let p = layout.params();
    (0..p.m)
        .map(|m| g.row(m).iter().map(|v| v.norm_sqr()).sum::<f64>() / p.n as f64)
        .collect()
}

/// Neighbour statistics of symbol `q`: data neighbours carry the error
/// variance of the current (`dl < 0`) or previous (`dl > 0`) iteration,
/// known neighbours carry no error and their own power.
fn layout_neighbours(
    layout: &FrameLayout,
    row_power: &[f64],
    q: usize,
    cur: f64,
    prev: f64,
    p_t: f64,
) -> Neighbours {
    let p = layout.params();
    let (lm, mn) = (p.l_max as i64, p.mn() as i64);
    let mut nb = Neighbours {
        err: Vec::with_capacity(2 * p.l_max + 1),
        power: Vec::with_capacity(2 * p.l_max + 1),
    };
    for dl in -lm..=lm {
        let m = ((q as i64 + dl).rem_euclid(mn) as usize) % p.m;
        if layout.is_data_row(m) {
            nb.err.push(if dl < 0 {
                cur
            } else if dl > 0 {
                prev
            } else {
                0.0
            });
            nb.power.push(p_t);
        } else {
            nb.err.push(0.0);
            nb.power.push(row_power[m]);
        }
    }
    nb
}

/// Closed-form summed powers for one traced iteration. `None` when the
/// stage has no closed form under this frame's channel knowledge.
fn theory_powers(
    frame: &Frame,
    trace: &IterationTrace,
    cur: f64,
    prev: f64,
    p_t: f64,
) -> Option<(f64, f64)> {
    let gains = frame.channel.gain_table();
    let sigma_dg2 = frame.estimate.sigma_dg2();
    let row_power = known_row_power(&frame.layout);
    let (mut s, mut r) = (0.0, 0.0);
    for sym in &trace.symbols {
        let nb = layout_neighbours(&frame.layout, &row_power, sym.q, cur, prev, p_t);
        let b = match trace.stage {
            Stage::Mrc | Stage::MrcDither | Stage::HardScalar => {
                mrc_breakdown(&gains, sym.q, &nb, sigma_dg2, p_t, frame.sigma_z2)
            }
            Stage::Soft if sigma_dg2 == 0.0 => soft_breakdown(
                &gains,
                sym.q,
                sym.filter.as_ref()?,
                &nb,
                p_t,
                frame.sigma_z2,
            ),
            _ => return None,
        };
        s += b.signal_power;
        r += b.ripn_power;
    }
    Some((s, r))
}

/// Ideal-cancellation bound summed with the trace's per-symbol scales.
fn bound_powers(frame: &Frame, trace: &IterationTrace, p_t: f64) -> (f64, f64) {
    let gains = frame.channel.gain_table();
    let sigma_dg2 = frame.estimate.sigma_dg2();
    let (mut s, mut r) = (0.0, 0.0);
    for sym in &trace.symbols {
        let w = sym.scale * sym.scale * p_t;
        s += w;
        r += w / sinr_upper_bound(&gains, sigma_dg2, p_t, frame.sigma_z2, sym.q);
    }
    (s, r)
}

/// Simulated and closed-form powers of every iteration of one frame.
pub fn frame_sinr(
    ctx: &RunContext,
    kind: DetectorKind,
    snr_idx: usize,
    frame_idx: u64,
) -> Result<Vec<IterationPowers>> {
    let f = ctx.draw_frame(snr_idx, frame_idx)?;
    let mut det = ctx.cfg.detector_config(kind);
    det.record_trace = true;
    let mut dither = frame_rng(ctx.cfg.seed, true, snr_idx, frame_idx);
    let truth = Truth { x: &f.x, s: &f.s };
    let res = run_detector(
        &f.r,
        &f.estimate,
        &f.layout,
        &det,
        &ctx.alphabet,
        f.sigma_z2,
        &mut dither,
        Some(truth),
    )?;
    let p_t = ctx.alphabet.power();
    let s = f.s.as_slice();
    let mut out = Vec::with_capacity(det.n_ite);
    for i in 0..det.n_ite {
        // after an early stop the last sweep would repeat unchanged
        let trace = &res.traces[i.min(res.traces.len() - 1)];
        let cur = res.mse[i];
        let prev = if i == 0 {
            res.init_mse.unwrap_or(p_t)
        } else {
            res.mse[i - 1]
        };
        let sim = measure_sinr(trace, s)?;
        let (ts, tr) = theory_powers(&f, trace, cur, prev, p_t).unwrap_or((f64::NAN, f64::NAN));
        let (bs, br) = bound_powers(&f, trace, p_t);
        out.push(IterationPowers {
            sim,
            theory_signal: ts,
            theory_ripn: tr,
            bound_signal: bs,
            bound_ripn: br,
        });
    }
    Ok(out)
}

/// Summed per-iteration powers over `cfg.trials` frames.
pub fn sinr_point(
    ctx: &RunContext,
    kind: DetectorKind,
    snr_idx: usize,
) -> Result<Vec<IterationPowers>> {
    let frames: Vec<Result<Vec<IterationPowers>>> = (0..ctx.cfg.trials)
        .into_par_iter()
        .map(|f| frame_sinr(ctx, kind, snr_idx, f))
        .collect();
    let mut acc = vec![IterationPowers::default(); ctx.cfg.n_ite];
    for fr in frames {
        for (a, p) in acc.iter_mut().zip(fr?.iter()) {
            a.add(p);
        }
    }
    Ok(acc)
}

pub fn run_sinr(ctx: &RunContext) -> Result<Vec<SinrRow>> {
    let mut rows = Vec::new();
    for (si, &snr_db) in ctx.cfg.snr_db.iter().enumerate() {
        for &kind in &ctx.cfg.detectors {
            for (i, p) in sinr_point(ctx, kind, si)?.iter().enumerate() {
                rows.push(SinrRow {
                    snr_db,
                    detector: kind,
                    iteration: i + 1,
                    sinr_sim_db: p.sim.sinr_db(DEFAULT_SINR_CAP_DB),
                    sinr_theory_db: to_db_capped(p.theory_sinr(), DEFAULT_SINR_CAP_DB),
                });
            }
        }
    }
    Ok(rows)
}

/// One line of the state-evolution table (averaged over channel draws).
#[derive(Debug, Clone, PartialEq)]
pub struct EvolveRow {
    pub snr_db: f64,
    pub kind: EvolutionKind,
    pub iteration: usize,
    pub sinr_db: f64,
    pub ser: f64,
    pub mse: f64,
    pub ber: f64,
}

/// Evolution kinds that have a closed form under the configured CSI.
pub fn evolution_kinds(ctx: &RunContext) -> Vec<EvolutionKind> {
    if ctx.cfg.gain_error_variance() > 0.0 {
        vec![EvolutionKind::MrcHard]
    } else {
        vec![EvolutionKind::MrcHard, EvolutionKind::Soft]
    }
}

/// State evolution averaged over `cfg.trials` channel draws.
pub fn evolve_point(
    ctx: &RunContext,
    kind: EvolutionKind,
    snr_idx: usize,
) -> Result<Vec<EvolveRow>> {
    let snr_db = ctx.cfg.snr_db[snr_idx];
    let sigma_z2 = noise_variance(snr_db, ctx.alphabet.power());
    let sigma_dg2 = ctx.cfg.gain_error_variance();
    let traces: Vec<Result<_>> = (0..ctx.cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = frame_rng(ctx.cfg.seed, false, snr_idx, t);
            let ch = sample_channel(&ctx.profile, &ctx.cfg.params, &mut rng)?;
            state_evolution(&ch.gain_table(), sigma_dg2, sigma_z2, &ctx.alphabet, kind)
        })
        .collect();
    let mut acc = vec![[0.0f64; 4]; EVOLUTION_ITERATIONS];
    for tr in traces {
        for (a, st) in acc.iter_mut().zip(tr?.steps) {
            a[0] += st.sinr_mean;
            a[1] += st.ser;
            a[2] += st.mse;
            a[3] += st.ber;
        }
    }
    let n = ctx.cfg.trials as f64;
    Ok(acc
        .iter()
        .enumerate()
        .map(|(i, a)| EvolveRow {
            snr_db,
            kind,
            iteration: i + 1,
            sinr_db: to_db_capped(a[0] / n, DEFAULT_SINR_CAP_DB),
            ser: a[1] / n,
            mse: a[2] / n,
            ber: a[3] / n,
        })
        .collect())
}

pub fn run_evolve(ctx: &RunContext) -> Result<Vec<EvolveRow>> {
    let mut rows = Vec::new();
    for si in 0..ctx.cfg.snr_db.len() {
        for kind in evolution_kinds(ctx) {
            rows.extend(evolve_point(ctx, kind, si)?);
        }
    }
    Ok(rows)
}

/// Empirical and predicted pilot-estimation error variances at one SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct EstStatsRow {
    pub snr_db: f64,
    pub snr_pilot_db: f64,
    pub trials: u64,
    /// Mean `|h_hat - h|^2` over the dense tap grid.
    pub var_dh_emp: f64,
    /// `sigma_z^2 / P_pilot^DD`.
    pub var_dh_theory: f64,
    /// Mean `|g_hat - g|^2` over all delays and samples.
    pub var_dg_emp: f64,
    /// `sigma_z^2 N / P_pilot^DD`.
    pub var_dg_theory: f64,
}

/// Squared tap and gain errors of one estimated frame.
fn estimation_errors(f: &Frame) -> (f64, f64) {
    let p = *f.channel.params();
    let (lo, hi) = doppler_range(p.n);
    let mut truth = vec![Complex64::new(0.0, 0.0); (p.l_max + 1) * p.n];
    for path in f
        .channel
        .paths()
        .iter()
        .filter(|x| (lo..=hi).contains(&x.doppler))
    {
        truth[path.delay * p.n + (path.doppler - lo) as usize] += path.gain;
    }
    let dh: f64 = f
        .estimate
        .taps()
        .iter()
        .zip(&truth)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        / truth.len() as f64;
    let g_true = f.channel.gain_table();
    let g_hat = f.estimate.gains();
    let mut dg = 0.0;
    for l in 0..=p.l_max {
        dg += g_hat
            .row(l)
            .iter()
            .zip(g_true.row(l))
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>();
    }
    (dh, dg / ((p.l_max + 1) * p.mn()) as f64)
}

pub fn est_stats_point(ctx: &RunContext, snr_idx: usize) -> Result<EstStatsRow> {
    let mut cfg = ctx.cfg.clone();
    cfg.pilot_mode = PilotMode::Estimated;
    let ectx = RunContext::new(cfg)?;
    let snr_db = ectx.cfg.snr_db[snr_idx];
    let errs: Vec<Result<(f64, f64)>> = (0..ectx.cfg.trials)
        .into_par_iter()
        .map(|t| Ok(estimation_errors(&ectx.draw_frame(snr_idx, t)?)))
        .collect();
    let (mut dh, mut dg) = (0.0, 0.0);
    for e in errs {
        let (a, b) = e?;
        dh += a;
        dg += b;
    }
    let n = ectx.cfg.trials as f64;
    let sigma_z2 = noise_variance(snr_db, ectx.alphabet.power());
    let p_dd = ectx.cfg.params.n as f64 * 10f64.powf(ectx.cfg.snr_pilot_db / 10.0) * sigma_z2;
    Ok(EstStatsRow {
        snr_db,
        snr_pilot_db: ectx.cfg.snr_pilot_db,
        trials: ectx.cfg.trials,
        var_dh_emp: dh / n,
        var_dh_theory: sigma_z2 / p_dd,
        var_dg_emp: dg / n,
        var_dg_theory: sigma_z2 * ectx.cfg.params.n as f64 / p_dd,
    })
}

pub fn run_est_stats(ctx: &RunContext) -> Result<Vec<EstStatsRow>> {
    (0..ctx.cfg.snr_db.len())
        .map(|i| est_stats_point(ctx, i))
        .collect()
}
