//! Simulation configuration: presets and the flat `key=value` file format.

use std::fmt;
use std::str::FromStr;

use crate::channel::{doppler_index_for_speed, ChannelProfile};
use crate::detectors::{DetectorConfig, DetectorKind, InitMode, DEFAULT_DITHER_RATIO};
use crate::error::{invalid, Error, Result};
use crate::grid_modem::{Constellation, ModemParams};

/// How the receiver obtains channel state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PilotMode {
    PerfectCsi,
    /// Embedded pilot at `snr_pilot_db`, read-off estimate.
    Estimated,
    /// True channel plus i.i.d. Gaussian tap errors.
    Synthetic,
}

impl PilotMode {
    pub fn name(self) -> &'static str {
        match self {
            PilotMode::PerfectCsi => "perfect_csi",
            PilotMode::Estimated => "estimated",
            PilotMode::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for PilotMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PilotMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perfect_csi" => Ok(PilotMode::PerfectCsi),
            "estimated" => Ok(PilotMode::Estimated),
            "synthetic" => Ok(PilotMode::Synthetic),
            _ => invalid(format!("unknown pilot mode '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => invalid(format!("unknown preset '{s}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub params: ModemParams,
    pub k_max: i64,
    pub qam: usize,
    pub detectors: Vec<DetectorKind>,
    pub n_ite: usize,
    pub m0: usize,
    /// `d_min / delta_d`.
    pub delta_d_ratio: f64,
    pub init_mode: Option<InitMode>,
    pub snr_db: Vec<f64>,
    pub pilot_mode: PilotMode,
    pub snr_pilot_db: f64,
    /// Overrides the synthetic gain-error variance (default `1 / SNR_pilot`).
    pub sigma_dg2: Option<f64>,
    pub min_frame_errors: u64,
    pub max_frames: u64,
    /// Frames (sinr), channel draws (evolve) or trials (est-stats).
    pub trials: u64,
    pub seed: u64,
}

const CARRIER_HZ: f64 = 5e9;
const UE_SPEED_KMH: f64 = 500.0;

impl SimConfig {
    /// M = 64, N = 16, EVA taps up to delay index 9 (the largest present is 8).
    pub fn desk() -> Self {
        SimConfig {
            params: ModemParams {
                m: 64,
                n: 16,
                t: 66.67e-6 / 8.0,
                l_max: 8,
            },
            k_max: 3,
            qam: 4,
            detectors: DetectorKind::ALL.to_vec(),
            n_ite: 10,
            m0: 0,
            delta_d_ratio: DEFAULT_DITHER_RATIO,
            init_mode: None,
            snr_db: vec![10.0, 12.0, 14.0, 16.0, 18.0],
            pilot_mode: PilotMode::PerfectCsi,
            snr_pilot_db: 40.0,
            sigma_dg2: None,
            min_frame_errors: 500,
            max_frames: 2_000_000,
            trials: 100,
            seed: 1,
        }
    }

    /// M = 512, N = 32, T = 66.67 us, 4-QAM, 5 GHz carrier at 500 km/h.
    pub fn paper() -> Self {
        let params = ModemParams {
            m: 512,
            n: 32,
            t: 66.67e-6,
            l_max: 19,
        };
        SimConfig {
            params,
            k_max: doppler_index_for_speed(&params, UE_SPEED_KMH, CARRIER_HZ),
            snr_db: (8..=20).map(|v| v as f64).collect(),
            ..Self::desk()
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.k_max < 0 {
            return invalid("k_max must be non-negative");
        }
        let a = self.constellation()?;
        if self.snr_db.is_empty() {
            return invalid("SNR grid is empty");
        }
        if self.snr_db.iter().any(|v| !v.is_finite()) {
            return invalid("SNR values must be finite");
        }
        if self.min_frame_errors == 0 {
            return invalid("min_frame_errors must be at least 1");
        }
        if self.max_frames == 0 || self.trials == 0 {
            return invalid("max_frames and trials must be at least 1");
        }
        if !self.snr_pilot_db.is_finite() {
            return invalid("snr_pilot_db must be finite");
        }
        if let Some(v) = self.sigma_dg2 {
            if !(v >= 0.0 && v.is_finite()) {
                return invalid("sigma_dg2 must be finite and non-negative");
            }
        }
        if !(self.delta_d_ratio > 2.0 && self.delta_d_ratio.is_finite()) {
            return invalid("delta_d_ratio must exceed 2");
        }
        let profile = self.profile()?;
        if profile.max_delay() > self.params.l_max {
            return invalid("channel delays exceed l_max");
        }
        for &k in &self.detectors {
            self.detector_config(k).validate(self.params.m, &a)?;
        }
        Ok(())
    }

    pub fn constellation(&self) -> Result<Constellation> {
        Constellation::qam(self.qam)
    }

    /// EVA profile on the delay grid, truncated to `l_max`.
    pub fn profile(&self) -> Result<ChannelProfile> {
        ChannelProfile::eva(self.params.delay_resolution(), self.k_max)?
            .truncated(self.params.l_max)
    }

    pub fn detector_config(&self, kind: DetectorKind) -> DetectorConfig {
        let d_min = Constellation::qam(self.qam).map_or(f64::NAN, |a| a.d_min());
        DetectorConfig {
            kind,
            n_ite: self.n_ite,
            m0: self.m0,
            delta_d: Some(d_min / self.delta_d_ratio),
            init_mode: self.init_mode,
            record_trace: false,
        }
    }

    /// Time-domain gain-error variance of the synthetic and estimated modes.
    pub fn gain_error_variance(&self) -> f64 {
        match self.pilot_mode {
            PilotMode::PerfectCsi => 0.0,
            PilotMode::Estimated => 10f64.powf(-self.snr_pilot_db / 10.0),
            PilotMode::Synthetic => self
                .sigma_dg2
                .unwrap_or(10f64.powf(-self.snr_pilot_db / 10.0)),
        }
    }

    /// Applies `key=value` lines on top of this configuration.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                msg: "expected key=value".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("duplicate key '{key}'"),
                });
            }
            self.set(key, value).map_err(|e| Error::Parse {
                line: line_no,
                msg: match e {
                    Error::InvalidInput(m) => m,
                    other => other.to_string(),
                },
            })?;
            seen.push(key.to_string());
        }
        Ok(())
    }

    /// Parses a full configuration: the desk preset with the file's keys
    /// applied, then validated.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::desk();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "m" => self.params.m = parse_num(value)?,
            "n" => self.params.n = parse_num(value)?,
            "l_max" => self.params.l_max = parse_num(value)?,
            "t_us" => {
                let t: f64 = parse_num(value)?;
                if !(t > 0.0 && t.is_finite()) {
                    return invalid("t_us must be positive");
                }
                self.params.t = t * 1e-6;
            }
            "k_max" => self.k_max = parse_num(value)?,
            "qam" => self.qam = parse_num(value)?,
            "detector" => self.detectors = parse_detectors(value)?,
            "n_ite" => self.n_ite = parse_num(value)?,
            "m0" => self.m0 = parse_num(value)?,
            "delta_d_ratio" => self.delta_d_ratio = parse_num(value)?,
            "init_mode" => self.init_mode = Some(value.parse()?),
            "snr_db" => self.snr_db = parse_snr_list(value)?,
            "pilot_mode" => self.pilot_mode = value.parse()?,
            "snr_pilot_db" => self.snr_pilot_db = parse_num(value)?,
            "sigma_dg2" => self.sigma_dg2 = Some(parse_num(value)?),
            "min_frame_errors" => self.min_frame_errors = parse_num(value)?,
            "max_frames" => self.max_frames = parse_count(value)?,
            "trials" => self.trials = parse_count(value)?,
            "seed" => self.seed = parse_num(value)?,
            _ => return invalid(format!("unknown key '{key}'")),
        }
        Ok(())
    }
}

fn parse_num<T: FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::InvalidInput(format!("cannot parse '{s}'")))
}

/// Integer count that may be written as `2e6`.
fn parse_count(s: &str) -> Result<u64> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let f: f64 = parse_num(s)?;
    if f >= 0.0 && f <= u64::MAX as f64 && f.fract() == 0.0 {
        Ok(f as u64)
    } else {
        invalid(format!("'{s}' is not a whole count"))
    }
}

fn parse_detectors(s: &str) -> Result<Vec<DetectorKind>> {
    if s == "all" {
        return Ok(DetectorKind::ALL.to_vec());
    }
    if s.is_empty() || s == "none" {
        return Ok(Vec::new());
    }
    s.split(',').map(|d| d.trim().parse()).collect()
}

/// Comma-separated values, each either a number or `start:step:stop`.
pub fn parse_snr_list(s: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        let fields: Vec<&str> = part.split(':').collect();
        match fields.as_slice() {
            [v] => out.push(parse_num(v.trim())?),
            [a, st, b] => {
                let (a, st, b): (f64, f64, f64) = (
                    parse_num(a.trim())?,
                    parse_num(st.trim())?,
                    parse_num(b.trim())?,
                );
                if !(st > 0.0) || !a.is_finite() || !b.is_finite() || b < a {
                    return invalid(format!("bad SNR range '{part}'"));
                }
                let count = ((b - a) / st + 1e-9).floor() as usize + 1;
                if count > 10_000 {
                    return invalid("SNR range too long");
                }
                out.extend((0..count).map(|i| a + st * i as f64));
            }
            _ => return invalid(format!("bad SNR entry '{part}'")),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        SimConfig::desk().validate().unwrap();
        let p = SimConfig::paper();
        p.validate().unwrap();
        assert_eq!(p.k_max, 5);
        assert_eq!(p.profile().unwrap().max_delay(), 19);
        assert_eq!(SimConfig::desk().profile().unwrap().max_delay(), 8);
    }

    #[test]
    fn parses_keys() {
        let cfg = SimConfig::from_text(
            "# comment\nm = 32\nn=8\nl_max=8\nqam=16\ndetector=mrc, soft_sicmmse\nsnr_db=10:2:14,20\n\
             pilot_mode=estimated\nsnr_pilot_db=35\nmax_frames=2e3\nseed=7 # trailing\n",
        )
        .unwrap();
        assert_eq!(cfg.params.m, 32);
        assert_eq!(cfg.qam, 16);
        assert_eq!(
            cfg.detectors,
            vec![DetectorKind::Mrc, DetectorKind::SoftSicMmse]
        );
        assert_eq!(cfg.snr_db, vec![10.0, 12.0, 14.0, 20.0]);
        assert_eq!(cfg.pilot_mode, PilotMode::Estimated);
        assert_eq!(cfg.max_frames, 2000);
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn rejects_bad_input() {
        for (text, line) in [
            ("m=64\nbogus=1\n", 2),
            ("m=64\nm=32\n", 2),
            ("noequals\n", 1),
            ("qam=abc\n", 1),
            ("snr_db=1:0:3\n", 1),
        ] {
            match SimConfig::from_text(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(SimConfig::from_text("min_frame_errors=0\n").is_err());
        assert!(SimConfig::from_text("qam=8\n").is_err());
        assert!(SimConfig::from_text("m=16\n").is_err());
    }
}
