//! CSV tables and the run-metadata sidecar.

use std::fmt::Write as _;
use std::io::Write;

use super::modes::{EstStatsRow, EvolveRow, SinrRow};
use super::RunRecord;
use crate::error::Result;

pub const BER_HEADER: &str =
    "snr_db,pilot_mode,detector,frames,frame_errors,bit_errors,ber,mean_iterations";
pub const SINR_HEADER: &str = "snr_db,detector,iteration,sinr_sim_db,sinr_theory_db";
pub const EVOLVE_HEADER: &str = "snr_db,kind,iteration,sinr_db,ser,mse,ber";
pub const EST_STATS_HEADER: &str =
    "snr_db,snr_pilot_db,trials,var_dh_emp,var_dh_theory,var_dg_emp,var_dg_theory";

pub fn ber_csv(records: &[RunRecord]) -> String {
    let mut s = format!("{BER_HEADER}\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.snr_db,
            r.pilot_mode,
            r.detector,
            r.frames,
            r.frame_errors,
            r.bit_errors,
            r.ber,
            r.mean_iterations
        );
    }
    s
}

pub fn sinr_csv(rows: &[SinrRow]) -> String {
    let mut s = format!("{SINR_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.snr_db, r.detector, r.iteration, r.sinr_sim_db, r.sinr_theory_db
        );
    }
    s
}

pub fn evolve_csv(rows: &[EvolveRow]) -> String {
    let mut s = format!("{EVOLVE_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.snr_db,
            r.kind.name(),
            r.iteration,
            r.sinr_db,
            r.ser,
            r.mse,
            r.ber
        );
    }
    s
}

pub fn est_stats_csv(rows: &[EstStatsRow]) -> String {
    let mut s = format!("{EST_STATS_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.snr_db,
            r.snr_pilot_db,
            r.trials,
            r.var_dh_emp,
            r.var_dh_theory,
            r.var_dg_emp,
            r.var_dg_theory
        );
    }
    s
}

/// `key=value` lines describing a run; kept apart from the CSV so the table
/// stays byte-identical across reruns.
pub fn write_meta<W: Write>(w: &mut W, entries: &[(String, String)]) -> Result<()> {
    for (k, v) in entries {
        writeln!(w, "{k}={v}")?;
    }
    Ok(())
}
