//! Monte-Carlo orchestration: frame generation, BER points and sweeps.
//!
//! Every frame draws from its own ChaCha8 stream keyed by the master seed and
//! numbered by `(snr index, frame index)`, so results do not depend on how
//! frames are spread over threads. All detectors see the same frames.

mod config;
pub mod csv;
pub mod modes;

use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{apply_channel, sample_channel, ChannelProfile, DiscreteChannel};
use crate::detectors::{run_detector, DetectorKind, Truth};
use crate::error::{invalid, Result};
use crate::grid_modem::{dd_to_time, time_to_dd, Constellation, DdGrid, TimeSequence};
use crate::pilot::{estimate_channel, perturb_channel, EstimatedChannel, FrameLayout, PilotConfig};

pub use config::{parse_snr_list, PilotMode, Preset, SimConfig};

const FRAME_SALT: u64 = 0x6f64_646d_5f66_726d;
const DITHER_SALT: u64 = 0x6f64_646d_5f64_6974;

/// Per-frame random stream.
pub fn frame_rng(seed: u64, dither: bool, snr_idx: usize, frame: u64) -> ChaCha8Rng {
    let salt = if dither { DITHER_SALT } else { FRAME_SALT };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(((snr_idx as u64) << 40) | (frame & ((1 << 40) - 1)));
    rng
}

/// `sigma_z^2 = P_t / SNR` for a transmit SNR in dB.
pub fn noise_variance(snr_db: f64, p_t: f64) -> f64 {
    p_t * 10f64.powf(-snr_db / 10.0)
}

/// Everything one transmitted frame produces.
#[derive(Debug, Clone)]
pub struct Frame {
    pub channel: DiscreteChannel,
    pub layout: FrameLayout,
    pub x: DdGrid,
    pub s: TimeSequence,
    pub r: TimeSequence,
    pub estimate: EstimatedChannel,
    pub sigma_z2: f64,
}

/// Fixed per-run inputs.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub cfg: SimConfig,
    pub profile: ChannelProfile,
    pub alphabet: Constellation,
}

impl RunContext {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(RunContext {
            profile: cfg.profile()?,
            alphabet: cfg.constellation()?,
            cfg,
        })
    }

    fn layout(&self, sigma_z2: f64) -> Result<FrameLayout> {
        let p = self.cfg.params;
        match self.cfg.pilot_mode {
            PilotMode::Estimated => {
                if !(sigma_z2 > 0.0) {
                    return invalid(
                        "estimated CSI needs a positive noise variance to set the pilot power",
                    );
                }
                FrameLayout::with_pilot(
                    p,
                    PilotConfig::from_pilot_snr(&p, self.cfg.snr_pilot_db, sigma_z2),
                )
            }
            _ => Ok(FrameLayout::data_only(p)),
        }
    }

    /// Draws channel, data and noise for frame `frame` at SNR index `snr_idx`
    /// and forms the receiver's channel knowledge.
    pub fn draw_frame(&self, snr_idx: usize, frame: u64) -> Result<Frame> {
        let snr_db = self.cfg.snr_db[snr_idx];
        let sigma_z2 = noise_variance(snr_db, self.alphabet.power());
        self.draw_frame_at(snr_idx, frame, sigma_z2)
    }

    pub fn draw_frame_at(&self, snr_idx: usize, frame: u64, sigma_z2: f64) -> Result<Frame> {
        let p = self.cfg.params;
        let mut rng = frame_rng(self.cfg.seed, false, snr_idx, frame);
        let channel = sample_channel(&self.profile, &p, &mut rng)?;
        let layout = self.layout(sigma_z2)?;
        let pts = self.alphabet.points();
        let data: Vec<Complex64> = (0..layout.n_data())
            .map(|_| pts[rng.random_range(0..pts.len())])
            .collect();
        let x = layout.build_frame(&data)?;
        let s = dd_to_time(&x)?;
        let r = apply_channel(&channel, &s, sigma_z2.sqrt(), &mut rng)?;
        let estimate = match self.cfg.pilot_mode {
            PilotMode::PerfectCsi => EstimatedChannel::perfect(&channel)?,
            PilotMode::Estimated => {
                let y = time_to_dd(&r)?;
                let pilot = layout.pilot().copied().expect("pilot layout");
                estimate_channel(&y, &pilot, sigma_z2)?
            }
            PilotMode::Synthetic => {
                let var = self.cfg.gain_error_variance() / p.n as f64;
                perturb_channel(&channel, var, &mut rng)?
            }
        };
        Ok(Frame {
            channel,
            layout,
            x,
            s,
            r,
            estimate,
            sigma_z2,
        })
    }
}

/// Result of detecting one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub bit_errors: u64,
    pub bits: u64,
    pub iterations: usize,
    /// Bit errors after each iteration (forward-filled to `n_ite`).
    pub iteration_bit_errors: Vec<u64>,
}

pub fn detect_frame(
    ctx: &RunContext,
    kind: DetectorKind,
    snr_idx: usize,
    frame: u64,
) -> Result<FrameOutcome> {
    let f = ctx.draw_frame(snr_idx, frame)?;
    let det = ctx.cfg.detector_config(kind);
    let mut dither = frame_rng(ctx.cfg.seed, true, snr_idx, frame);
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
    Ok(FrameOutcome {
        bit_errors: res.final_bit_errors().unwrap_or(0),
        bits: (f.layout.n_data() as u64) * ctx.alphabet.bits_per_symbol() as u64,
        iterations: res.iterations,
        iteration_bit_errors: res.bit_errors,
    })
}

/// Aggregates of one (SNR, detector) point.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub snr_db: f64,
    pub pilot_mode: PilotMode,
    pub detector: DetectorKind,
    pub frames: u64,
    pub frame_errors: u64,
    pub bit_errors: u64,
    pub bits: u64,
    pub ber: f64,
    pub mean_iterations: f64,
    /// Bit errors summed over frames after each iteration.
    pub iteration_bit_errors: Vec<u64>,
    /// Whether the frame cap ended the run before the error target.
    pub cap_reached: bool,
    pub wall_time_s: f64,
}

impl RunRecord {
    pub fn iteration_ber(&self) -> Vec<f64> {
        self.iteration_bit_errors
            .iter()
            .map(|&e| {
                if self.bits == 0 {
                    0.0
                } else {
                    e as f64 / self.bits as f64
                }
            })
            .collect()
    }
}

fn batch_size() -> u64 {
    (4 * rayon::current_num_threads()).max(8) as u64
}

/// Runs frames until `min_frame_errors` frame errors or `max_frames`
/// frames. Frames are detected in parallel batches and folded in index
/// order, so the record is the same for any thread count.
pub fn run_ber_point(ctx: &RunContext, kind: DetectorKind, snr_idx: usize) -> Result<RunRecord> {
    let cfg = &ctx.cfg;
    if snr_idx >= cfg.snr_db.len() {
        return invalid(format!("SNR index {snr_idx} outside the grid"));
    }
    let start = Instant::now();
    let mut rec = RunRecord {
        snr_db: cfg.snr_db[snr_idx],
        pilot_mode: cfg.pilot_mode,
        detector: kind,
        frames: 0,
        frame_errors: 0,
        bit_errors: 0,
        bits: 0,
        ber: 0.0,
        mean_iterations: 0.0,
        iteration_bit_errors: vec![0; cfg.n_ite],
        cap_reached: false,
        wall_time_s: 0.0,
    };
    let mut iter_sum = 0u64;
    let batch = batch_size();
    'outer: while rec.frames < cfg.max_frames {
        let first = rec.frames;
        let last = (first + batch).min(cfg.max_frames);
        let outcomes: Vec<Result<FrameOutcome>> = (first..last)
            .into_par_iter()
            .map(|f| detect_frame(ctx, kind, snr_idx, f))
            .collect();
        for out in outcomes {
            let out = out?;
            rec.frames += 1;
            rec.bits += out.bits;
            rec.bit_errors += out.bit_errors;
            rec.frame_errors += (out.bit_errors > 0) as u64;
            iter_sum += out.iterations as u64;
            for (acc, e) in rec
                .iteration_bit_errors
                .iter_mut()
                .zip(&out.iteration_bit_errors)
            {
                *acc += e;
            }
            if rec.frame_errors >= cfg.min_frame_errors {
                break 'outer;
            }
        }
    }
    rec.cap_reached = rec.frame_errors < cfg.min_frame_errors;
    rec.ber = if rec.bits == 0 {
        0.0
    } else {
        rec.bit_errors as f64 / rec.bits as f64
    };
    rec.mean_iterations = iter_sum as f64 / rec.frames.max(1) as f64;
    rec.wall_time_s = start.elapsed().as_secs_f64();
    Ok(rec)
}

/// All (SNR, detector) points, SNR-major.
pub fn run_sweep(ctx: &RunContext) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for i in 0..ctx.cfg.snr_db.len() {
        for &kind in &ctx.cfg.detectors {
            out.push(run_ber_point(ctx, kind, i)?);
        }
    }
    Ok(out)
}
