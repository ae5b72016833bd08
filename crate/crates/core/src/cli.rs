//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::Result;
use crate::sim::{csv, modes, run_sweep, Preset, RunContext, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Desk,
    Paper,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Desk => Preset::Desk,
            PresetArg::Paper => Preset::Paper,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// BER per SNR point and detector.
    Ber,
    /// Per-iteration simulated and closed-form SINR.
    Sinr,
    /// State-evolution SINR/SER/MSE/BER traces.
    Evolve,
    /// Pilot channel-estimation error statistics.
    EstStats,
}

#[derive(Debug, Clone, Parser)]
#[command(name = "oddm", version, about = "ODDM link-level simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// key=value configuration applied on top of the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output CSV path (stdout if absent). A `.meta` sidecar is written next to it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = PresetArg::Desk)]
    pub preset: PresetArg,
}

pub fn parse_args<I, T>(args: I) -> std::result::Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    Cli::try_parse_from(args)
}

/// Preset, then the config file, then `--seed`.
pub fn build_config(cli: &Cli) -> Result<SimConfig> {
    let mut cfg = SimConfig::preset(cli.preset.into());
    if let Some(path) = &cli.config {
        cfg.apply_text(&fs::read_to_string(path)?)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Output of one command: the CSV text and metadata entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub csv: String,
    pub meta: Vec<(String, String)>,
}

pub fn execute(cli: &Cli) -> Result<Report> {
    let cfg = build_config(cli)?;
    let ctx = RunContext::new(cfg)?;
    let start = Instant::now();
    let mut meta = vec![
        ("seed".to_string(), ctx.cfg.seed.to_string()),
        ("pilot_mode".to_string(), ctx.cfg.pilot_mode.to_string()),
        ("m".to_string(), ctx.cfg.params.m.to_string()),
        ("n".to_string(), ctx.cfg.params.n.to_string()),
        ("l_max".to_string(), ctx.cfg.params.l_max.to_string()),
        ("k_max".to_string(), ctx.cfg.k_max.to_string()),
    ];
    let csv = match cli.command {
        Command::Ber => {
            meta.push((
                "min_frame_errors".into(),
                ctx.cfg.min_frame_errors.to_string(),
            ));
            meta.push(("max_frames".into(), ctx.cfg.max_frames.to_string()));
            let recs = run_sweep(&ctx)?;
            for r in &recs {
                let key = format!("point.{}.{}", r.snr_db, r.detector);
                meta.push((format!("{key}.cap_reached"), r.cap_reached.to_string()));
                meta.push((
                    format!("{key}.wall_time_s"),
                    format!("{:.3}", r.wall_time_s),
                ));
            }
            csv::ber_csv(&recs)
        }
        Command::Sinr => {
            meta.push(("frames".into(), ctx.cfg.trials.to_string()));
            csv::sinr_csv(&modes::run_sinr(&ctx)?)
        }
        Command::Evolve => {
            meta.push(("channel_draws".into(), ctx.cfg.trials.to_string()));
            csv::evolve_csv(&modes::run_evolve(&ctx)?)
        }
        Command::EstStats => {
            meta.push(("trials".into(), ctx.cfg.trials.to_string()));
            csv::est_stats_csv(&modes::run_est_stats(&ctx)?)
        }
    };
    meta.push((
        "wall_time_s".into(),
        format!("{:.3}", start.elapsed().as_secs_f64()),
    ));
    Ok(Report { csv, meta })
}

fn meta_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Runs a parsed command and writes its outputs.
pub fn run(cli: &Cli) -> Result<()> {
    let report = execute(cli)?;
    match &cli.out {
        Some(path) => {
            fs::write(path, &report.csv)?;
            let mut f = fs::File::create(meta_path(path))?;
            csv::write_meta(&mut f, &report.meta)?;
        }
        None => print!("{}", report.csv),
    }
    Ok(())
}
