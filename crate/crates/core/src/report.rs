//! Report persistence and plot-ready emission: versioned JSON, flat CSV
//! tables, and a fixed-order text summary.
//!
//! Every emitted file starts with (or contains) the schema version and the
//! hash of the configuration that produced it. CSV files carry them in a
//! leading `#` comment line, which gnuplot and most readers skip.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::Deserialize;

use crate::ensemble::MemberCurve;
use crate::error::{Error, Result};
use crate::pipeline::{MetricsReport, ScopedSamples, REPORT_SCHEMA_VERSION};

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: u32,
}

pub fn write_report_json(path: &Path, report: &MetricsReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Format(format!("report serialization: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_report_json(path: &Path) -> Result<MetricsReport> {
    let text = std::fs::read_to_string(path)?;
    let probe: VersionProbe = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if probe.schema_version != REPORT_SCHEMA_VERSION {
        return Err(Error::Version { found: probe.schema_version, expected: REPORT_SCHEMA_VERSION });
    }
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn open_csv(path: &Path, config_hash: &str) -> Result<std::io::BufWriter<std::fs::File>> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "# schema_version={REPORT_SCHEMA_VERSION} config_hash={config_hash}")?;
    Ok(out)
}

/// `table1.csv`: one row per algorithm with means and percent-of-WMMSE.
pub fn write_table_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut out = open_csv(path, &report.config_hash)?;
    writeln!(out, "algorithm,total_mean,total_pct,a_mean,a_pct,b_mean,b_pct")?;
    for row in &report.table {
        writeln!(
            out,
            "{},{:.6},{:.2},{:.6},{:.2},{:.6},{:.2}",
            row.algorithm, row.mean_total, row.pct_total, row.mean_a, row.pct_a, row.mean_b,
            row.pct_b
        )?;
    }
    out.flush()?;
    Ok(())
}

/// One CDF file per scope: rows pair a cumulative probability with each
/// algorithm's rate at that quantile (all columns share the instance count).
pub fn write_cdf_csvs(dir: &Path, report: &MetricsReport) -> Result<()> {
    let scopes: [(&str, fn(&ScopedSamples) -> &Vec<f64>); 3] = [
        ("cdf_total.csv", |s| &s.total),
        ("cdf_topo_a.csv", |s| &s.topo_a),
        ("cdf_topo_b.csv", |s| &s.topo_b),
    ];
    for (name, select) in scopes {
        let mut out = open_csv(&dir.join(name), &report.config_hash)?;
        writeln!(out, "prob,wmmse,si_dnn,dnn,max_power,rand_power")?;
        let n = select(&report.cdf.wmmse).len();
        for i in 0..n {
            let prob = (i + 1) as f64 / n as f64;
            writeln!(
                out,
                "{:.6},{},{},{},{},{}",
                prob,
                select(&report.cdf.wmmse)[i],
                select(&report.cdf.si_dnn)[i],
                select(&report.cdf.dnn)[i],
                select(&report.cdf.max_power)[i],
                select(&report.cdf.rand_power)[i],
            )?;
        }
        out.flush()?;
    }
    Ok(())
}

pub fn write_eps_sweep_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut out = open_csv(path, &report.config_hash)?;
    writeln!(
        out,
        "epsilon,enhancing_rate,enhancing_rate_a,enhancing_rate_b,si_mean,si_mean_a,si_mean_b"
    )?;
    for r in &report.eps_sweep {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.epsilon, r.enhancing_rate, r.enhancing_rate_a, r.enhancing_rate_b, r.si_mean,
            r.si_mean_a, r.si_mean_b
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_rounds_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut out = open_csv(path, &report.config_hash)?;
    writeln!(
        out,
        "round,requests,enhanced,enhancing_rate,requests_a,enhanced_a,enhancing_rate_a,\
         requests_b,enhanced_b,enhancing_rate_b,si_mean,dnn_eval_a,dnn_eval_b,wmmse_eval_a,wmmse_eval_b"
    )?;
    for r in &report.rounds {
        writeln!(
            out,
            "{},{},{},{:.6},{},{},{:.6},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.round,
            r.requests,
            r.enhanced,
            r.enhancing_rate,
            r.requests_a,
            r.enhanced_a,
            r.enhancing_rate_a,
            r.requests_b,
            r.enhanced_b,
            r.enhancing_rate_b,
            r.si_mean,
            r.dnn_eval_a,
            r.dnn_eval_b,
            r.wmmse_eval_a,
            r.wmmse_eval_b
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_training_curves_csv(
    path: &Path,
    curves: &[MemberCurve],
    config_hash: &str,
) -> Result<()> {
    let mut out = open_csv(path, config_hash)?;
    writeln!(out, "member,epoch,train_loss,val_loss")?;
    for curve in curves {
        for (epoch, &tl) in curve.train_loss.iter().enumerate() {
            let vl = curve
                .val_loss
                .get(epoch)
                .map_or(String::new(), |v| format!("{v}"));
            writeln!(out, "{},{},{},{}", curve.member, epoch, tl, vl)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Emits every CSV derived from a report into `dir`.
pub fn write_all_csvs(dir: &Path, report: &MetricsReport) -> Result<()> {
    write_table_csv(&dir.join("table1.csv"), report)?;
    write_cdf_csvs(dir, report)?;
    if !report.eps_sweep.is_empty() {
        write_eps_sweep_csv(&dir.join("eps_sweep.csv"), report)?;
    }
    write_rounds_csv(&dir.join("rounds.csv"), report)?;
    Ok(())
}

/// Fixed-order text summary of the mean sum-rate comparison.
pub fn render_table(report: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10} {:>18} {:>18} {:>18}",
        "Alg.", "Total", "Topology A", "Topology B"
    );
    for row in &report.table {
        let cell = |m: f64, p: f64| format!("{m:.3} ({p:.2}%)");
        let _ = writeln!(
            s,
            "{:<10} {:>18} {:>18} {:>18}",
            row.algorithm,
            cell(row.mean_total, row.pct_total),
            cell(row.mean_a, row.pct_a),
            cell(row.mean_b, row.pct_b)
        );
    }
    let _ = writeln!(
        s,
        "requests: {}   rounds: {}   enhancing rate: {:.4}",
        report.n_requests, report.rounds_completed, report.enhancing_rate
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{AlgRow, CdfSamples, UncertaintyStats};

    fn fake_report() -> MetricsReport {
        let samples = ScopedSamples {
            total: vec![1.0, 2.0, 3.0, 4.0],
            topo_a: vec![1.0, 3.0],
            topo_b: vec![2.0, 4.0],
        };
        MetricsReport {
            schema_version: REPORT_SCHEMA_VERSION,
            config_hash: "abc123".into(),
            alpha: 1.96,
            epsilon: 0.2,
            n_requests: 4,
            rounds_completed: 0,
            enhancing_rate: 0.25,
            table: vec![AlgRow {
                algorithm: "WMMSE".into(),
                mean_total: 2.5,
                mean_a: 2.0,
                mean_b: 3.0,
                pct_total: 100.0,
                pct_a: 100.0,
                pct_b: 100.0,
            }],
            cdf: CdfSamples {
                wmmse: samples.clone(),
                si_dnn: samples.clone(),
                dnn: samples.clone(),
                max_power: samples.clone(),
                rand_power: samples,
            },
            eps_sweep: Vec::new(),
            rounds: Vec::new(),
            iteration_stats: None,
            uncertainty: UncertaintyStats::default(),
        }
    }

    #[test]
    fn report_json_round_trip_and_version_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let report = fake_report();
        write_report_json(&path, &report).unwrap();
        let back = read_report_json(&path).unwrap();
        assert_eq!(report, back);

        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        v["schema_version"] = serde_json::json!(77);
        std::fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
        assert!(matches!(read_report_json(&path), Err(Error::Version { .. })));
    }

    #[test]
    fn cdf_csv_is_nondecreasing_and_reaches_one() {
        let dir = tempfile::tempdir().unwrap();
        let report = fake_report();
        write_cdf_csvs(dir.path(), &report).unwrap();
        let text = std::fs::read_to_string(dir.path().join("cdf_total.csv")).unwrap();
        let mut last_prob = 0.0;
        let mut last_rate = f64::NEG_INFINITY;
        let mut final_prob = 0.0;
        for line in text.lines().skip(2) {
            let cells: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
            assert!(cells[0] >= last_prob);
            assert!(cells[1] >= last_rate);
            last_prob = cells[0];
            last_rate = cells[1];
            final_prob = cells[0];
        }
        assert!((final_prob - 1.0).abs() < 1e-12);
    }

    #[test]
    fn table_render_has_fixed_header_and_hash_in_csv() {
        let dir = tempfile::tempdir().unwrap();
        let report = fake_report();
        let text = render_table(&report);
        assert!(text.contains("WMMSE"));
        assert!(text.contains("(100.00%)"));

        let path = dir.path().join("table1.csv");
        write_table_csv(&path, &report).unwrap();
        let csv = std::fs::read_to_string(&path).unwrap();
        assert!(csv.starts_with("# schema_version=1 config_hash=abc123"));
    }
}
