use siim_core::config::ExperimentConfig;
use siim_core::pipeline::{run_with_state, training_stage, RunOptions};
use std::time::Instant;

fn main() {
    let cfg = ExperimentConfig {
        n_links: 10,
        train_size: 5000,
        test_size: 2000,
        m: 5,
        layer_dims: vec![200, 200, 100],
        epochs: 300,
        val_fraction: 0.0,
        sigma2: 1e-4,
        epsilon: 0.1,
        n_si: 500,
        master_seed: 42,
        ..ExperimentConfig::default()
    };
    let t0 = Instant::now();
    let (mut state, _) = training_stage(&cfg).unwrap();
    println!("train: {:.0}s", t0.elapsed().as_secs_f64());
    let opts = RunOptions {
        n_requests: 25_000,
        stop_after_rounds: Some(3),
        round_tail: 1000,
        full_solver_stats: false,
        eval_set_size: 300,
    };
    let t1 = Instant::now();
    let report = run_with_state(&mut state, &opts).unwrap();
    println!("rounds run: {:.0}s, requests {}", t1.elapsed().as_secs_f64(), report.n_requests);
    for r in &report.rounds {
        println!(
            "round {}: req={:>5} enh={:>4} rate={:.3} (A {:.3} / B {:.3}) si={:.3} dnn_eval A={:.4} B={:.4} (wmmse A={:.4} B={:.4})",
            r.round, r.requests, r.enhanced, r.enhancing_rate, r.enhancing_rate_a,
            r.enhancing_rate_b, r.si_mean, r.dnn_eval_a, r.dnn_eval_b, r.wmmse_eval_a, r.wmmse_eval_b
        );
    }
    println!(
        "check: enh3 {:.3} < enh0 {:.3} ? {}   dnnB3 {:.4} > dnnB0 {:.4} ? {}",
        report.rounds[3].enhancing_rate,
        report.rounds[0].enhancing_rate,
        report.rounds[3].enhancing_rate < report.rounds[0].enhancing_rate,
        report.rounds[3].dnn_eval_b,
        report.rounds[0].dnn_eval_b,
        report.rounds[3].dnn_eval_b > report.rounds[0].dnn_eval_b
    );
}
