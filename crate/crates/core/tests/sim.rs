//! End-to-end runs of the simulation harness and CLI on small grids.

use std::fs;

use oddm::analysis::{mrc_sd_sinr_bound, state_evolution, EvolutionKind};
use oddm::channel::sample_channel;
use oddm::cli::{execute, parse_args, run, Command, PresetArg};
use oddm::detectors::{run_detector, DetectorKind, Truth};
use oddm::error::Error;
use oddm::sim::csv::{BER_HEADER, SINR_HEADER};
use oddm::sim::modes::sinr_point;
use oddm::sim::{frame_rng, noise_variance, run_sweep, RunContext, SimConfig};

const SMALL: &str =
    "m = 32\nn = 8\nn_ite = 4\nmin_frame_errors = 5\nmax_frames = 6\ntrials = 4\nseed = 11\n";

/// The small base config with the keys in `extra` replacing their defaults.
fn merged(extra: &str) -> String {
    let key = |l: &str| l.split('=').next().unwrap().trim().to_string();
    let over: Vec<String> = extra.lines().map(key).collect();
    let mut text: String = SMALL
        .lines()
        .filter(|l| !over.contains(&key(l)))
        .map(|l| format!("{l}\n"))
        .collect();
    text.push_str(extra);
    text
}

fn small(extra: &str) -> SimConfig {
    SimConfig::from_text(&merged(extra)).unwrap()
}

fn config_file(dir: &tempfile::TempDir, extra: &str) -> String {
    let path = dir.path().join("run.cfg");
    fs::write(&path, merged(extra)).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn ber_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_file(&dir, "detector = mrc,soft_sicmmse\nsnr_db = 8:4:16\n");
    let cli = parse_args(["oddm", "ber", "--config", &cfg]).unwrap();
    let a = execute(&cli).unwrap();
    let b = execute(&cli).unwrap();
    assert_eq!(a.csv, b.csv);
    let lines: Vec<&str> = a.csv.lines().collect();
    assert_eq!(lines[0], BER_HEADER);
    assert_eq!(lines.len(), 1 + 2 * 3);
    assert!(lines[1].starts_with("8,perfect_csi,mrc,"));
    assert!(lines[2].starts_with("8,perfect_csi,soft_sicmmse,"));

    let other = parse_args(["oddm", "ber", "--config", &cfg, "--seed", "12"]).unwrap();
    assert_ne!(execute(&other).unwrap().csv, a.csv);
}

#[test]
fn empty_detector_list_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_file(&dir, "detector = none\n");
    let cli = parse_args(["oddm", "ber", "--config", &cfg]).unwrap();
    assert_eq!(execute(&cli).unwrap().csv, format!("{BER_HEADER}\n"));
}

#[test]
fn run_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_file(&dir, "detector = mrc\nsnr_db = 12\n");
    let out = dir.path().join("ber.csv");
    let cli = parse_args([
        "oddm",
        "ber",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ])
    .unwrap();
    run(&cli).unwrap();
    let csv = fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let meta = fs::read_to_string(dir.path().join("ber.csv.meta")).unwrap();
    assert!(meta.lines().any(|l| l == "seed=11"));
    assert!(meta
        .lines()
        .any(|l| l.starts_with("point.12.mrc.cap_reached=")));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_file(&dir, "detector = mrc\nsnr_db = 12\n");
    let out = dir.path().join("missing").join("ber.csv");
    let cli = parse_args([
        "oddm",
        "ber",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ])
    .unwrap();
    assert!(matches!(run(&cli), Err(Error::Io(_))));
}

#[test]
fn bad_config_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_file(&dir, "qam = 4\nbogus = 1\n");
    let cli = parse_args(["oddm", "ber", "--config", &cfg]).unwrap();
    match execute(&cli) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 9),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn cli_arguments() {
    let cli = parse_args(["oddm", "sinr", "--preset", "paper", "--seed", "5"]).unwrap();
    assert_eq!(cli.command, Command::Sinr);
    assert_eq!(cli.preset, PresetArg::Paper);
    assert_eq!(cli.seed, Some(5));
    let cli = parse_args(["oddm", "est-stats"]).unwrap();
    assert_eq!(cli.command, Command::EstStats);
    assert_eq!(cli.preset, PresetArg::Desk);
    assert!(parse_args(["oddm"]).is_err());
    assert!(parse_args(["oddm", "ber", "--preset", "huge"]).is_err());
    assert!(parse_args(["oddm", "ber", "--seed", "-1"]).is_err());
}

#[test]
fn sinr_table_has_one_row_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_file(
        &dir,
        "detector = mrc,hard_sicmmse\nsnr_db = 10,14\ntrials = 2\n",
    );
    let cli = parse_args(["oddm", "sinr", "--config", &cfg]).unwrap();
    let csv = execute(&cli).unwrap().csv;
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], SINR_HEADER);
    assert_eq!(lines.len(), 1 + 2 * 2 * 4);
    for l in &lines[1..] {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!(f.len(), 5);
        assert!(f[3].parse::<f64>().unwrap().is_finite());
    }
}

#[test]
fn noiseless_frames_decode_without_errors() {
    let ctx = RunContext::new(small("")).unwrap();
    for kind in [DetectorKind::MrcSd, DetectorKind::HardSicMmse] {
        let det = ctx.cfg.detector_config(kind);
        for f in 0..4 {
            let fr = ctx.draw_frame_at(0, f, 0.0).unwrap();
            let mut rng = frame_rng(ctx.cfg.seed, true, 0, f);
            let truth = Truth { x: &fr.x, s: &fr.s };
            let res = run_detector(
                &fr.r,
                &fr.estimate,
                &fr.layout,
                &det,
                &ctx.alphabet,
                0.0,
                &mut rng,
                Some(truth),
            )
            .unwrap();
            assert_eq!(res.final_bit_errors(), Some(0), "{kind} frame {f}");
        }
    }
}

#[test]
fn frame_cap_stops_a_point() {
    let cfg = small("detector = mrc\nsnr_db = 0\nmin_frame_errors = 1000\nmax_frames = 3\n");
    let ctx = RunContext::new(cfg).unwrap();
    let recs = run_sweep(&ctx).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].frames, 3);
    assert!(recs[0].cap_reached);
    assert!(recs[0].ber > 0.0);
}

#[test]
fn mrc_sd_stays_below_its_dither_bound() {
    let ctx = RunContext::new(small("snr_db = 20\ntrials = 6\nn_ite = 12\n")).unwrap();
    let sim = sinr_point(&ctx, DetectorKind::MrcSd, 0)
        .unwrap()
        .last()
        .unwrap()
        .sim;
    let delta_d = ctx
        .cfg
        .detector_config(DetectorKind::MrcSd)
        .dither_bound(&ctx.alphabet);
    let p_t = ctx.alphabet.power();
    let (mut s, mut r) = (0.0, 0.0);
    for f in 0..ctx.cfg.trials {
        let fr = ctx.draw_frame(0, f).unwrap();
        let gains = fr.channel.gain_table();
        for q in 0..gains.mn() {
            let e: f64 = gains.spreading_vector(q).iter().map(|v| v.norm_sqr()).sum();
            let w = e * e * p_t;
            s += w;
            r += w / mrc_sd_sinr_bound(&gains, q, delta_d, p_t, fr.sigma_z2);
        }
    }
    assert!(
        sim.sinr() <= s / r,
        "measured {} bound {}",
        sim.sinr(),
        s / r
    );
}

#[test]
fn state_evolution_mse_does_not_grow_at_moderate_snr() {
    let ctx = RunContext::new(small("")).unwrap();
    for snr_db in [10.0, 14.0, 18.0] {
        let sigma_z2 = noise_variance(snr_db, ctx.alphabet.power());
        for t in 0..5 {
            let mut rng = frame_rng(3, false, 0, t);
            let ch = sample_channel(&ctx.profile, &ctx.cfg.params, &mut rng).unwrap();
            for kind in [EvolutionKind::MrcHard, EvolutionKind::Soft] {
                let tr =
                    state_evolution(&ch.gain_table(), 0.0, sigma_z2, &ctx.alphabet, kind).unwrap();
                for w in tr.steps.windows(2) {
                    assert!(
                        w[1].mse <= w[0].mse * (1.0 + 1e-12),
                        "{snr_db} dB draw {t} {}",
                        kind.name()
                    );
                }
            }
        }
    }
}
