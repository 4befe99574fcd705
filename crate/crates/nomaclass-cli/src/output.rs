//! Result files: CSV tables plus a JSON manifest.
//!
//! Every file is written deterministically, so reruns with the same manifest
//! inputs are byte-identical. Floats use Rust's shortest round-trip
//! formatting; empty cells mean "no data", never zero.

use std::io::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use nomaclass::analysis::{
    self, capacity, mc_error_prob, sinr_report, CapacityInputs, ChannelAverage, LinkState,
    SicPolicy, ThetaSearch,
};
use nomaclass::mlc::Hypothesis;
use nomaclass::modes::ModeTable;
use nomaclass::sim::{measured_capacity_inputs, RateEstimate, SweepResult};
use nomaclass::stats::RunningMean;

use crate::config::ExperimentSpec;

/// Bumped whenever a CSV column layout changes.
pub const SCHEMA_VERSION: u32 = 1;

fn fmt(x: f64) -> String {
    if x.is_finite() {
        x.to_string()
    } else {
        String::new()
    }
}

/// Rate, lower, upper; all empty when the denominator is empty.
fn rate_cells(est: &RateEstimate) -> [String; 3] {
    if est.trials == 0 {
        [String::new(), String::new(), String::new()]
    } else {
        [fmt(est.rate), fmt(est.interval.lo), fmt(est.interval.hi)]
    }
}

/// Mean, lower, upper of a sample mean; empty when no samples.
fn mean_cells(m: &RunningMean) -> [String; 3] {
    if m.count() == 0 {
        [String::new(), String::new(), String::new()]
    } else {
        let ci = m.mean_interval(nomaclass::sim::CONFIDENCE_Z);
        [fmt(m.mean()), fmt(ci.lo), fmt(ci.hi)]
    }
}

fn open_csv(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(csv::Writer::from_writer(file))
}

/// One row per (SNR, scheme): the error-rate curves with Wilson bounds.
pub fn write_curves(dir: &Path, sweep: &SweepResult) -> Result<()> {
    let path = dir.join("curves.csv");
    let mut w = open_csv(&path)?;
    w.write_record([
        "snr_db",
        "scheme",
        "trials",
        "oma_noma_errors",
        "oma_noma_rate",
        "oma_noma_lo",
        "oma_noma_hi",
        "nearfar_errors",
        "nearfar_trials",
        "nearfar_rate",
        "nearfar_lo",
        "nearfar_hi",
        "mc_errors",
        "mc_trials",
        "mc_rate",
        "mc_lo",
        "mc_hi",
        "frame_losses",
        "frame_loss_rate",
        "frame_loss_lo",
        "frame_loss_hi",
    ])?;
    for point in &sweep.points {
        let c = &point.counters;
        let on = c.oma_noma_error();
        let nf = c.role_error();
        let mc = c.mode_error();
        let fl = c.frame_loss();
        let mut row = vec![fmt(point.snr_db), point.scheme.name().to_string(), c.trials.to_string()];
        row.push(on.errors.to_string());
        row.extend(rate_cells(&on));
        row.push(nf.errors.to_string());
        row.push(nf.trials.to_string());
        row.extend(rate_cells(&nf));
        row.push(mc.errors.to_string());
        row.push(mc.trials.to_string());
        row.extend(rate_cells(&mc));
        row.push(fl.errors.to_string());
        row.extend(rate_cells(&fl));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn hypothesis_label(index: usize, num_noma: usize) -> String {
    match Hypothesis::from_index(index, num_noma) {
        Hypothesis::Oma => "oma".to_string(),
        Hypothesis::FarMode(l) => format!("far{l}"),
        Hypothesis::NearMode(l) => format!("near{l}"),
    }
}

/// One confusion file per SNR point; rows are truths, columns verdicts.
pub fn write_confusion(dir: &Path, sweep: &SweepResult) -> Result<()> {
    let n = sweep.num_hypotheses;
    let num_noma = (n - 1) / 2;
    let mut snrs: Vec<f64> = sweep.points.iter().map(|p| p.snr_db).collect();
    snrs.dedup();
    for snr in snrs {
        let path = dir.join(format!("confusion_{snr}.csv"));
        let mut w = open_csv(&path)?;
        let mut header = vec!["scheme".to_string(), "truth".to_string()];
        header.extend((0..n).map(|v| hypothesis_label(v, num_noma)));
        w.write_record(&header)?;
        for point in sweep.points.iter().filter(|p| p.snr_db == snr) {
            for truth in 0..n {
                let mut row =
                    vec![point.scheme.name().to_string(), hypothesis_label(truth, num_noma)];
                row.extend(
                    point.counters.confusion[truth * n..(truth + 1) * n]
                        .iter()
                        .map(|c| c.to_string()),
                );
                w.write_record(&row)?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

/// Capacity per (SNR, scheme): the model average fed by the measured
/// classification matrix, plus the per-trial sample mean and the paired gap
/// to the genie when the sweep collected them.
pub fn write_capacity(
    dir: &Path,
    sweep: &SweepResult,
    table: &ModeTable,
    mc_samples: usize,
    seed: u64,
) -> Result<()> {
    let num_noma = (sweep.num_hypotheses - 1) / 2;
    let path = dir.join("capacity.csv");
    let mut w = open_csv(&path)?;
    w.write_record([
        "snr_db",
        "scheme",
        "trials",
        "capacity_model",
        "capacity_samples",
        "capacity_mean",
        "capacity_lo",
        "capacity_hi",
        "gap_mean",
        "gap_lo",
        "gap_hi",
    ])?;
    for point in &sweep.points {
        let c = &point.counters;
        let channel = ChannelAverage::Draws { count: mc_samples, seed };
        let model = measured_capacity_inputs(c, num_noma, channel)
            .map(|inputs| capacity(table, &inputs, point.snr_db))
            .transpose()
            .context("capacity average over measured decision probabilities")?;
        let mut row = vec![
            fmt(point.snr_db),
            point.scheme.name().to_string(),
            c.trials.to_string(),
            model.map(fmt).unwrap_or_default(),
            c.capacity.count().to_string(),
        ];
        row.extend(mean_cells(&c.capacity));
        row.extend(mean_cells(&c.capacity_gap));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Closed-form per-pair figures at `|h| = 1`: SINRs of correct and stale
/// cancellation, residual layer powers, the SINR-ordering predicate, and the
/// pairwise symbol-confusion probabilities (exact sum and min-distance form).
pub fn write_analysis(dir: &Path, table: &ModeTable, snrs_db: &[f64]) -> Result<()> {
    let path = dir.join("analysis.csv");
    let mut w = open_csv(&path)?;
    w.write_record([
        "snr_db",
        "true_mode",
        "decided_mode",
        "eta_true",
        "eta_decided",
        "e_far",
        "e_near",
        "sinr_improved",
        "p_confusion_exact",
        "p_confusion_min_distance",
    ])?;
    for &snr in snrs_db {
        let link = LinkState::from_mag_sq(1.0, 10f64.powf(-snr / 10.0));
        let report = sinr_report(table, link, SicPolicy::default());
        for l in 1..table.len() {
            for m in 1..table.len() {
                let (exact, approx) = if l == m {
                    (String::new(), String::new())
                } else {
                    (
                        fmt(mc_error_prob(table, l, m, link, true)),
                        fmt(mc_error_prob(table, l, m, link, false)),
                    )
                };
                let improved = analysis::sinr_condition(table, l, m, link, SicPolicy::default());
                w.write_record([
                    fmt(snr),
                    l.to_string(),
                    m.to_string(),
                    fmt(report.eta_correct[l]),
                    fmt(report.eta_mis[l][m]),
                    fmt(report.e_far[l][m]),
                    fmt(report.e_near[l][m]),
                    improved.to_string(),
                    exact,
                    approx,
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Capacity of an error-free classifier per SNR; the simulation-free bound.
pub fn write_capacity_bound(
    dir: &Path,
    table: &ModeTable,
    snrs_db: &[f64],
    mc_samples: usize,
    seed: u64,
) -> Result<()> {
    let path = dir.join("capacity_bound.csv");
    let mut w = open_csv(&path)?;
    w.write_record(["snr_db", "capacity"])?;
    for &snr in snrs_db {
        let inputs =
            CapacityInputs::perfect(table.len(), ChannelAverage::Draws { count: mc_samples, seed });
        let cap = capacity(table, &inputs, snr).context("capacity bound average")?;
        w.write_record([fmt(snr), fmt(cap)])?;
    }
    w.flush()?;
    Ok(())
}

/// The rotation grid and its measured objective.
pub fn write_theta_search(dir: &Path, search: &ThetaSearch) -> Result<()> {
    let path = dir.join("theta_search.csv");
    let mut w = open_csv(&path)?;
    w.write_record(["theta", "capacity"])?;
    for (theta, cap) in search.grid.iter().zip(&search.capacities) {
        w.write_record([fmt(*theta), fmt(*cap)])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    tool: &'static str,
    version: &'static str,
    seed: u64,
    config_hash: String,
    config: &'a ExperimentSpec,
}

/// Records everything needed to reproduce the run. No timestamps: the file
/// must be byte-identical across reruns.
pub fn write_manifest(dir: &Path, spec: &ExperimentSpec) -> Result<()> {
    let canonical = serde_json::to_string(spec).context("serializing the experiment spec")?;
    let config_hash = format!("{:x}", Sha256::digest(canonical.as_bytes()));
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        tool: "nomaclass",
        version: env!("CARGO_PKG_VERSION"),
        seed: spec.seed,
        config_hash,
        config: spec,
    };
    let path = dir.join("manifest.json");
    let mut file = std::fs::File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    serde_json::to_writer_pretty(&mut file, &manifest)?;
    file.write_all(b"\n")?;
    Ok(())
}
