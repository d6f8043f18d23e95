use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use siim_core::config::ExperimentConfig;
use siim_core::dataset::{generate_labeled, read_jsonl, to_samples, write_jsonl, DatasetRecord};
use siim_core::ensemble::{load_ensemble, save_ensemble, train_ensemble, Ensemble};
use siim_core::pipeline::{
    run_with_state, topology_a, RequestStream, RunOptions, SelfImproveState,
};
use siim_core::report::{
    read_report_json, render_table, write_all_csvs, write_eps_sweep_csv, write_report_json,
    write_rounds_csv, write_training_curves_csv,
};
use siim_core::seeds::STREAM_TRAIN_DATA;

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct DatasetMeta<'a> {
    schema_version: u32,
    config_hash: &'a str,
    kind: &'a str,
    records: usize,
}

fn write_meta(path: &Path, cfg: &ExperimentConfig, kind: &str, records: usize) -> Result<()> {
    let meta = DatasetMeta {
        schema_version: DATASET_SCHEMA_VERSION,
        config_hash: &cfg.config_hash(),
        kind,
        records,
    };
    std::fs::write(path, serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Labeled test records in exactly the serving stream's order.
fn labeled_test_records(cfg: &ExperimentConfig) -> Result<Vec<DatasetRecord>> {
    let stream = RequestStream::from_config(cfg)?;
    let noise = cfg.noise_model();
    let opts = cfg.wmmse_options();
    let mut records = Vec::with_capacity(cfg.test_size);
    for i in 0..cfg.test_size {
        let h = stream.instance(i);
        let sol = siim_core::solver::wmmse(&h, &noise, None, &opts)?;
        records.push(DatasetRecord::from_instance(&h, Some(&sol.p)));
    }
    Ok(records)
}

pub fn gen_data(cfg: &ExperimentConfig) -> Result<()> {
    let out = &cfg.output_dir;
    let topo = topology_a(cfg)?;
    let train = generate_labeled(
        &topo,
        cfg.train_size,
        cfg.master_seed,
        STREAM_TRAIN_DATA,
        &cfg.noise_model(),
        &cfg.wmmse_options(),
    )
    .context("generating training records")?;
    write_jsonl(&out.join("train.jsonl"), &train)?;
    write_meta(&out.join("train.meta.json"), cfg, "train", train.len())?;

    let test = labeled_test_records(cfg).context("generating test records")?;
    write_jsonl(&out.join("test.jsonl"), &test)?;
    write_meta(&out.join("test.meta.json"), cfg, "test", test.len())?;

    println!(
        "wrote {} training and {} test records to {}",
        train.len(),
        test.len(),
        out.display()
    );
    Ok(())
}

pub fn train(cfg: &ExperimentConfig, data: &Path) -> Result<()> {
    let records =
        read_jsonl(data).with_context(|| format!("reading dataset {}", data.display()))?;
    let samples = to_samples(&records, cfg.p_max).context("converting dataset to samples")?;
    let trained = train_ensemble(cfg.m, &cfg.full_layer_dims(), &samples, &cfg.train_config())
        .context("training ensemble")?;
    let hash = cfg.config_hash();
    let path = cfg.output_dir.join("ensemble.json");
    std::fs::write(&path, save_ensemble(&trained.ensemble, &hash))?;
    write_training_curves_csv(&cfg.output_dir.join("training_curves.csv"), &trained.curves, &hash)?;
    println!("wrote {} ({} members, {} samples)", path.display(), cfg.m, samples.len());
    Ok(())
}

fn load_state(
    cfg: &ExperimentConfig,
    ensemble_path: &Path,
    train_data: Option<&Path>,
    needs_base: bool,
) -> Result<SelfImproveState> {
    let bytes = std::fs::read(ensemble_path)
        .with_context(|| format!("reading ensemble {}", ensemble_path.display()))?;
    let ensemble: Ensemble = load_ensemble(&bytes).context("parsing ensemble file")?;
    let base = if let Some(path) = train_data {
        let records =
            read_jsonl(path).with_context(|| format!("reading dataset {}", path.display()))?;
        to_samples(&records, cfg.p_max)?
    } else if needs_base {
        let topo = topology_a(cfg)?;
        let records = generate_labeled(
            &topo,
            cfg.train_size,
            cfg.master_seed,
            STREAM_TRAIN_DATA,
            &cfg.noise_model(),
            &cfg.wmmse_options(),
        )
        .context("regenerating base dataset")?;
        to_samples(&records, cfg.p_max)?
    } else {
        Vec::new()
    };
    Ok(SelfImproveState::from_parts(cfg.clone(), ensemble, base)?)
}

pub fn run(cfg: &ExperimentConfig, ensemble_path: &Path, train_data: Option<&Path>) -> Result<()> {
    let mut state = load_state(cfg, ensemble_path, train_data, true)?;
    let report = run_with_state(&mut state, &RunOptions::evaluation(cfg))?;
    let out = &cfg.output_dir;
    write_report_json(&out.join("report.json"), &report)?;
    write_all_csvs(out, &report)?;
    print!("{}", render_table(&report));
    Ok(())
}

pub fn report(cfg: &ExperimentConfig, report_path: &Path) -> Result<()> {
    let report = read_report_json(report_path)
        .with_context(|| format!("reading report {}", report_path.display()))?;
    write_all_csvs(&cfg.output_dir, &report)?;
    print!("{}", render_table(&report));
    Ok(())
}

pub fn sweep_eps(
    cfg: &ExperimentConfig,
    ensemble_path: &Path,
    eps: Option<Vec<f64>>,
) -> Result<()> {
    let mut cfg = cfg.clone();
    if let Some(eps) = eps {
        anyhow::ensure!(!eps.is_empty(), "epsilon list must not be empty");
        cfg.eps_sweep = eps;
    }
    // Gate sensitivity is evaluated on the frozen ensemble: no retraining.
    cfg.n_si = cfg.test_size.max(1) + 1;
    let mut state = load_state(&cfg, ensemble_path, None, false)?;
    let report = run_with_state(&mut state, &RunOptions::evaluation(&cfg))?;
    let out = &cfg.output_dir;
    write_report_json(&out.join("eps_sweep_report.json"), &report)?;
    write_eps_sweep_csv(&out.join("eps_sweep.csv"), &report)?;
    println!("epsilon  enhancing_rate  enhancing_A  enhancing_B  si_mean");
    for row in &report.eps_sweep {
        println!(
            "{:<8} {:<15.4} {:<12.4} {:<12.4} {:.4}",
            row.epsilon, row.enhancing_rate, row.enhancing_rate_a, row.enhancing_rate_b, row.si_mean
        );
    }
    Ok(())
}

pub fn sweep_rounds(
    cfg: &ExperimentConfig,
    ensemble_path: &Path,
    train_data: Option<&Path>,
    rounds: usize,
    n_si: Option<usize>,
    max_requests: usize,
) -> Result<()> {
    let mut cfg = cfg.clone();
    if let Some(n_si) = n_si {
        cfg.n_si = n_si;
    }
    let mut state = load_state(&cfg, ensemble_path, train_data, true)?;
    let opts = RunOptions {
        n_requests: max_requests,
        stop_after_rounds: Some(rounds),
        round_tail: 1000,
        full_solver_stats: false,
        eval_set_size: 300,
    };
    let report = run_with_state(&mut state, &opts)?;
    let out = &cfg.output_dir;
    write_report_json(&out.join("rounds_report.json"), &report)?;
    write_rounds_csv(&out.join("rounds.csv"), &report)?;
    println!("round  requests  enhanced  enh_rate  dnn_eval_A  dnn_eval_B");
    for row in &report.rounds {
        println!(
            "{:<6} {:<9} {:<9} {:<9.4} {:<11.4} {:.4}",
            row.round, row.requests, row.enhanced, row.enhancing_rate, row.dnn_eval_a,
            row.dnn_eval_b
        );
    }
    Ok(())
}
