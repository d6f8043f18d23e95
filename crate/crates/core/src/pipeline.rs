//! The self-improving loop.
//!
//! Training stage: label channel instances from topology A with the
//! cold-started solver, train the ensemble. Serving stage: for every request,
//! predict; if the prediction qualifies as credible, transmit with it,
//! otherwise enhance it by warm-starting the solver from the prediction and
//! store the enhanced pair. Once enough enhanced samples accumulate, retrain
//! every member from scratch on the merged dataset and clear the buffer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dataset::{generate_labeled, to_samples};
use crate::ensemble::{predict, train_ensemble, Ensemble, MemberCurve};
use crate::error::{Error, Result};
use crate::netsim::{
    make_topology, sample_channel, sum_rate_in, ChannelInstance, PowerVector, Topology,
};
use crate::neural::{LabeledSample, TrainConfig};
use crate::qualify::qualify;
use crate::seeds::{derive_seed, rng_from, STREAM_EVAL_SET, STREAM_RAND_POWER, STREAM_RETRAIN,
    STREAM_TEST_DATA, STREAM_TRAIN_DATA};
use crate::solver::{max_power, rand_power, wmmse};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Fixed report row order.
pub const ALGORITHMS: [&str; 5] = ["WMMSE", "SI-DNN", "DNN", "MaxPower", "RandPower"];

/// Running totals kept by the serving loop.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub requests: usize,
    pub enhanced: usize,
    pub achieved_rate_sum: f64,
    pub wmmse_rate_sum: f64,
    pub per_topology: BTreeMap<String, TopoCounters>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TopoCounters {
    pub requests: usize,
    pub enhanced: usize,
}

/// Mutable state of the self-improving stage.
#[derive(Debug, Clone)]
pub struct SelfImproveState {
    pub config: ExperimentConfig,
    /// The live ensemble, replaced on every retraining round.
    pub ensemble: Ensemble,
    /// Frozen round-0 ensemble: the "no self-improving" predictor baseline.
    pub initial_ensemble: Ensemble,
    /// Base dataset `D`; grows by the buffer contents at each retrain.
    pub base_dataset: Vec<LabeledSample>,
    /// Enhanced samples accumulated since the last retrain.
    pub si_dataset: Vec<LabeledSample>,
    /// Retraining rounds completed.
    pub round: usize,
    pub counters: Counters,
}

/// Everything recorded about one served request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub topology_id: String,
    pub credible: bool,
    /// Always `!credible`.
    pub enhanced: bool,
    pub criterion_ratio: f64,
    pub used_power: PowerVector,
    /// Sum rate achieved by the transmitted power.
    pub achieved_rate: f64,
    /// Sum rate at the raw prediction (before any enhancement).
    pub prediction_rate: f64,
    /// Cold-started solver reference on the same instance.
    pub wmmse_rate: f64,
    pub wmmse_iterations: usize,
    /// Warm-started solver iterations when the request was enhanced.
    pub enhance_iterations: Option<usize>,
    /// Mean per-link epistemic variance of the prediction.
    pub mean_epistemic_var: f64,
}

/// Runs the training stage: generate the labeled topology-A dataset, train
/// the ensemble, return a ready-to-serve state plus training curves.
pub fn training_stage(config: &ExperimentConfig) -> Result<(SelfImproveState, Vec<MemberCurve>)> {
    config.validate()?;
    if config.train_size == 0 {
        return Err(Error::invalid("train_size must be positive: cannot train on nothing"));
    }
    let topo_a = topology_a(config)?;
    let records = generate_labeled(
        &topo_a,
        config.train_size,
        config.master_seed,
        STREAM_TRAIN_DATA,
        &config.noise_model(),
        &config.wmmse_options(),
    )?;
    let samples = to_samples(&records, config.p_max)?;
    let trained = train_ensemble(config.m, &config.full_layer_dims(), &samples, &config.train_config())?;
    let state = SelfImproveState {
        config: config.clone(),
        initial_ensemble: trained.ensemble.clone(),
        ensemble: trained.ensemble,
        base_dataset: samples,
        si_dataset: Vec::new(),
        round: 0,
        counters: Counters::default(),
    };
    Ok((state, trained.curves))
}

impl SelfImproveState {
    /// Assembles a serving state around an already trained ensemble.
    pub fn from_parts(
        config: ExperimentConfig,
        ensemble: Ensemble,
        base_dataset: Vec<LabeledSample>,
    ) -> Result<Self> {
        config.validate()?;
        let expected_in = config.n_links * config.n_links;
        if ensemble.input_dim() != expected_in || ensemble.n_targets() != config.n_links {
            return Err(Error::invalid(format!(
                "ensemble shape ({} -> {}) does not match n_links = {}",
                ensemble.input_dim(),
                ensemble.n_targets(),
                config.n_links
            )));
        }
        Ok(SelfImproveState {
            config,
            initial_ensemble: ensemble.clone(),
            ensemble,
            base_dataset,
            si_dataset: Vec::new(),
            round: 0,
            counters: Counters::default(),
        })
    }
}

pub fn topology_a(config: &ExperimentConfig) -> Result<Topology> {
    make_topology(config.n_links, "A", &mut rng_from(config.topo_seed_a, 0, 0))
}

pub fn topology_b(config: &ExperimentConfig) -> Result<Topology> {
    make_topology(config.n_links, "B", &mut rng_from(config.topo_seed_b, 0, 0))
}

/// Serves one request: predict, gate, and either transmit the prediction or
/// enhance it with the warm-started solver (buffering the enhanced pair).
pub fn handle_request(
    state: &mut SelfImproveState,
    h: &ChannelInstance,
) -> Result<(PowerVector, RequestRecord)> {
    let cfg = &state.config;
    let noise = cfg.noise_model();
    let gate = cfg.gate_params();
    let opts = cfg.wmmse_options();

    let features = h.features();
    let pred = predict(&state.ensemble, &features)?;
    let decision = qualify(h, &noise, &pred, &gate)?;

    let cold = wmmse(h, &noise, None, &opts)?;
    let wmmse_rate = sum_rate_in(h, &cold.p, &noise, cfg.log_base);

    let (used_power, achieved_rate, enhance_iterations) = if decision.credible {
        (pred.power(cfg.p_max), decision.r_hat, None)
    } else {
        let p_hat = pred.power(cfg.p_max);
        let warm = wmmse(h, &noise, Some(&p_hat), &opts)?;
        let rate = sum_rate_in(h, &warm.p, &noise, cfg.log_base);
        let target: Vec<f64> =
            warm.p.iter().map(|&x| (x / cfg.p_max).clamp(0.0, 1.0)).collect();
        state.si_dataset.push(LabeledSample::new(features.clone(), target)?);
        (warm.p, rate, Some(warm.iterations))
    };

    let record = RequestRecord {
        topology_id: h.topology_id.clone(),
        credible: decision.credible,
        enhanced: !decision.credible,
        criterion_ratio: decision.ratio,
        used_power: used_power.clone(),
        achieved_rate,
        prediction_rate: decision.r_hat,
        wmmse_rate,
        wmmse_iterations: cold.iterations,
        enhance_iterations,
        mean_epistemic_var: mean(&pred.epistemic_var),
    };

    let c = &mut state.counters;
    c.requests += 1;
    c.achieved_rate_sum += achieved_rate;
    c.wmmse_rate_sum += wmmse_rate;
    let topo = c.per_topology.entry(h.topology_id.clone()).or_default();
    topo.requests += 1;
    if record.enhanced {
        c.enhanced += 1;
        topo.enhanced += 1;
    }
    Ok((used_power, record))
}

/// Retrains every member from fresh initialization on `D ∪ D_SI` once the
/// buffer reaches the threshold; otherwise does nothing. Returns whether a
/// round fired.
pub fn maybe_retrain(state: &mut SelfImproveState) -> Result<bool> {
    if state.si_dataset.len() < state.config.n_si {
        return Ok(false);
    }
    state.base_dataset.append(&mut state.si_dataset);
    let round = state.round + 1;
    let train_cfg = TrainConfig {
        seed: derive_seed(state.config.master_seed, STREAM_RETRAIN, round as u64),
        ..state.config.train_config()
    };
    let trained = train_ensemble(
        state.config.m,
        &state.config.full_layer_dims(),
        &state.base_dataset,
        &train_cfg,
    )?;
    state.ensemble = trained.ensemble;
    state.round = round;
    Ok(true)
}

/// Deterministic request source: topology membership follows the configured
/// B fraction, channel seeds derive from the request index.
pub struct RequestStream {
    topo_a: Topology,
    topo_b: Topology,
    b_fraction: f64,
    master_seed: u64,
}

impl RequestStream {
    pub fn from_config(config: &ExperimentConfig) -> Result<Self> {
        Ok(RequestStream {
            topo_a: topology_a(config)?,
            topo_b: topology_b(config)?,
            b_fraction: config.b_fraction,
            master_seed: config.master_seed,
        })
    }

    /// Evenly interleaved B membership at the configured fraction.
    pub fn is_b(&self, index: usize) -> bool {
        let f = self.b_fraction;
        ((index + 1) as f64 * f).floor() > (index as f64 * f).floor()
    }

    pub fn instance(&self, index: usize) -> ChannelInstance {
        let topo = if self.is_b(index) { &self.topo_b } else { &self.topo_a };
        sample_channel(topo, derive_seed(self.master_seed, STREAM_TEST_DATA, index as u64))
    }
}

/// Serving-loop options.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Hard cap on requests served.
    pub n_requests: usize,
    /// Stop early once this many retraining rounds fired and `round_tail`
    /// further requests were observed.
    pub stop_after_rounds: Option<usize>,
    pub round_tail: usize,
    /// Also run the warm-started solver on credible requests, enabling the
    /// iteration comparison and the epsilon sweep.
    pub full_solver_stats: bool,
    /// Per-topology size of the fixed eval set used to track the raw
    /// predictor across rounds.
    pub eval_set_size: usize,
}

impl RunOptions {
    /// Options for a plain evaluation run over the configured stream.
    pub fn evaluation(config: &ExperimentConfig) -> Self {
        RunOptions {
            n_requests: config.test_size,
            stop_after_rounds: None,
            round_tail: 0,
            full_solver_stats: true,
            eval_set_size: 200,
        }
    }

    /// Options for a retraining-focused run.
    pub fn rounds(max_requests: usize, rounds: usize, tail: usize) -> Self {
        RunOptions {
            n_requests: max_requests,
            stop_after_rounds: Some(rounds),
            round_tail: tail,
            full_solver_stats: false,
            eval_set_size: 200,
        }
    }
}

/// Mean sum-rate row for one algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgRow {
    pub algorithm: String,
    pub mean_total: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    /// Percent of the WMMSE mean in the same scope.
    pub pct_total: f64,
    pub pct_a: f64,
    pub pct_b: f64,
}

/// Sorted sum-rate samples per scope.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScopedSamples {
    pub total: Vec<f64>,
    pub topo_a: Vec<f64>,
    pub topo_b: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CdfSamples {
    pub wmmse: ScopedSamples,
    pub si_dnn: ScopedSamples,
    pub dnn: ScopedSamples,
    pub max_power: ScopedSamples,
    pub rand_power: ScopedSamples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsRow {
    pub epsilon: f64,
    pub enhancing_rate: f64,
    pub enhancing_rate_a: f64,
    pub enhancing_rate_b: f64,
    pub si_mean: f64,
    pub si_mean_a: f64,
    pub si_mean_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    pub requests: usize,
    pub enhanced: usize,
    pub enhancing_rate: f64,
    pub requests_a: usize,
    pub enhanced_a: usize,
    pub enhancing_rate_a: f64,
    pub requests_b: usize,
    pub enhanced_b: usize,
    pub enhancing_rate_b: f64,
    /// Mean gated (transmitted) rate within the round.
    pub si_mean: f64,
    /// Raw-predictor mean rate on the fixed eval sets at round start.
    pub dnn_eval_a: f64,
    pub dnn_eval_b: f64,
    /// Cold-started solver means on the same eval sets.
    pub wmmse_eval_a: f64,
    pub wmmse_eval_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub count: usize,
    pub median_cold: f64,
    pub median_warm: f64,
    pub mean_cold: f64,
    pub mean_warm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyStats {
    /// Median per-request mean epistemic variance over round-0 requests.
    pub round0_median_epi_a: f64,
    pub round0_median_epi_b: f64,
}

/// Full outcome of a serving run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub alpha: f64,
    pub epsilon: f64,
    pub n_requests: usize,
    pub rounds_completed: usize,
    pub enhancing_rate: f64,
    pub table: Vec<AlgRow>,
    pub cdf: CdfSamples,
    /// Present when the run collected full solver statistics.
    pub eps_sweep: Vec<EpsRow>,
    pub rounds: Vec<RoundRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration_stats: Option<IterationStats>,
    pub uncertainty: UncertaintyStats,
}

struct RequestRow {
    is_b: bool,
    ratio: f64,
    rate_pred: f64,
    rate_si: f64,
    enhanced: bool,
    rate_dnn: f64,
    rate_wmmse: f64,
    rate_max: f64,
    rate_rand: f64,
    rate_warm: Option<f64>,
    iters_cold: usize,
    iters_warm: Option<usize>,
    epi_mean: f64,
}

/// Convenience wrapper: training stage followed by a serving run.
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> Result<MetricsReport> {
    let (mut state, _) = training_stage(config)?;
    run_with_state(&mut state, opts)
}

/// Drives the serving loop over the configured deterministic stream and
/// aggregates every reported metric.
pub fn run_with_state(state: &mut SelfImproveState, opts: &RunOptions) -> Result<MetricsReport> {
    let cfg = state.config.clone();
    let noise = cfg.noise_model();
    let stream = RequestStream::from_config(&cfg)?;

    // Fixed per-topology eval sets for tracking the raw predictor per round.
    let topo_a = topology_a(&cfg)?;
    let topo_b = topology_b(&cfg)?;
    let eval_a: Vec<ChannelInstance> = (0..opts.eval_set_size)
        .map(|i| sample_channel(&topo_a, derive_seed(cfg.master_seed, STREAM_EVAL_SET, i as u64)))
        .collect();
    let eval_b: Vec<ChannelInstance> = (0..opts.eval_set_size)
        .map(|i| {
            sample_channel(&topo_b, derive_seed(cfg.master_seed, STREAM_EVAL_SET, (1 << 32) + i as u64))
        })
        .collect();
    let wmmse_eval_a = solver_eval_mean(&eval_a, &cfg)?;
    let wmmse_eval_b = solver_eval_mean(&eval_b, &cfg)?;

    let mut rows: Vec<RequestRow> = Vec::with_capacity(opts.n_requests.min(1 << 20));
    let mut round_starts: Vec<usize> = vec![0];
    let mut round_evals: Vec<(f64, f64)> = vec![(
        predictor_eval_mean(&state.ensemble, &eval_a, &cfg)?,
        predictor_eval_mean(&state.ensemble, &eval_b, &cfg)?,
    )];

    let full_power = max_power(cfg.n_links, cfg.p_max);
    for i in 0..opts.n_requests {
        let h = stream.instance(i);
        let is_b = stream.is_b(i);
        let (_, rec) = handle_request(state, &h)?;

        let (rate_warm, iters_warm) = if let Some(it) = rec.enhance_iterations {
            (Some(rec.achieved_rate), Some(it))
        } else if opts.full_solver_stats {
            let pred_power = rec.used_power.clone();
            let warm = wmmse(&h, &noise, Some(&pred_power), &cfg.wmmse_options())?;
            (Some(sum_rate_in(&h, &warm.p, &noise, cfg.log_base)), Some(warm.iterations))
        } else {
            (None, None)
        };

        let rate_dnn = {
            let pred = predict(&state.initial_ensemble, &h.features())?;
            sum_rate_in(&h, &pred.power(cfg.p_max), &noise, cfg.log_base)
        };
        let rate_max = sum_rate_in(&h, &full_power, &noise, cfg.log_base);
        let p_rand = rand_power(
            cfg.n_links,
            cfg.p_max,
            &mut rng_from(cfg.master_seed, STREAM_RAND_POWER, i as u64),
        );
        let rate_rand = sum_rate_in(&h, &p_rand, &noise, cfg.log_base);

        rows.push(RequestRow {
            is_b,
            ratio: rec.criterion_ratio,
            rate_pred: rec.prediction_rate,
            rate_si: rec.achieved_rate,
            enhanced: rec.enhanced,
            rate_dnn,
            rate_wmmse: rec.wmmse_rate,
            rate_max,
            rate_rand,
            rate_warm,
            iters_cold: rec.wmmse_iterations,
            iters_warm,
            epi_mean: rec.mean_epistemic_var,
        });

        if maybe_retrain(state)? {
            round_starts.push(rows.len());
            round_evals.push((
                predictor_eval_mean(&state.ensemble, &eval_a, &cfg)?,
                predictor_eval_mean(&state.ensemble, &eval_b, &cfg)?,
            ));
        }

        if let Some(target) = opts.stop_after_rounds {
            let in_current = rows.len() - round_starts.last().copied().unwrap_or(0);
            if state.round >= target && in_current >= opts.round_tail {
                break;
            }
        }
    }

    Ok(assemble_report(&cfg, opts, &rows, &round_starts, &round_evals, wmmse_eval_a, wmmse_eval_b))
}

fn solver_eval_mean(instances: &[ChannelInstance], cfg: &ExperimentConfig) -> Result<f64> {
    if instances.is_empty() {
        return Ok(0.0);
    }
    let noise = cfg.noise_model();
    let mut acc = 0.0;
    for h in instances {
        let sol = wmmse(h, &noise, None, &cfg.wmmse_options())?;
        acc += sum_rate_in(h, &sol.p, &noise, cfg.log_base);
    }
    Ok(acc / instances.len() as f64)
}

fn predictor_eval_mean(
    ens: &Ensemble,
    instances: &[ChannelInstance],
    cfg: &ExperimentConfig,
) -> Result<f64> {
    if instances.is_empty() {
        return Ok(0.0);
    }
    let noise = cfg.noise_model();
    let mut acc = 0.0;
    for h in instances {
        let pred = predict(ens, &h.features())?;
        acc += sum_rate_in(h, &pred.power(cfg.p_max), &noise, cfg.log_base);
    }
    Ok(acc / instances.len() as f64)
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn median(xs: &mut Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = xs.len() / 2;
    if xs.len() % 2 == 0 {
        (xs[mid - 1] + xs[mid]) / 2.0
    } else {
        xs[mid]
    }
}

fn pct(value: f64, reference: f64) -> f64 {
    if reference > 0.0 {
        100.0 * value / reference
    } else {
        0.0
    }
}

fn scoped(rows: &[&RequestRow], rate: impl Fn(&RequestRow) -> f64) -> ScopedSamples {
    let mut total: Vec<f64> = rows.iter().map(|r| rate(r)).collect();
    let mut a: Vec<f64> = rows.iter().filter(|r| !r.is_b).map(|r| rate(r)).collect();
    let mut b: Vec<f64> = rows.iter().filter(|r| r.is_b).map(|r| rate(r)).collect();
    total.sort_by(|x, y| x.partial_cmp(y).unwrap());
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ScopedSamples { total, topo_a: a, topo_b: b }
}

fn alg_row(name: &str, samples: &ScopedSamples, reference: &ScopedSamples) -> AlgRow {
    let mean_total = mean(&samples.total);
    let mean_a = mean(&samples.topo_a);
    let mean_b = mean(&samples.topo_b);
    AlgRow {
        algorithm: name.to_string(),
        mean_total,
        mean_a,
        mean_b,
        pct_total: pct(mean_total, mean(&reference.total)),
        pct_a: pct(mean_a, mean(&reference.topo_a)),
        pct_b: pct(mean_b, mean(&reference.topo_b)),
    }
}

fn assemble_report(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    rows: &[RequestRow],
    round_starts: &[usize],
    round_evals: &[(f64, f64)],
    wmmse_eval_a: f64,
    wmmse_eval_b: f64,
) -> MetricsReport {
    let refs: Vec<&RequestRow> = rows.iter().collect();
    let cdf = CdfSamples {
        wmmse: scoped(&refs, |r| r.rate_wmmse),
        si_dnn: scoped(&refs, |r| r.rate_si),
        dnn: scoped(&refs, |r| r.rate_dnn),
        max_power: scoped(&refs, |r| r.rate_max),
        rand_power: scoped(&refs, |r| r.rate_rand),
    };
    let table = vec![
        alg_row("WMMSE", &cdf.wmmse, &cdf.wmmse),
        alg_row("SI-DNN", &cdf.si_dnn, &cdf.wmmse),
        alg_row("DNN", &cdf.dnn, &cdf.wmmse),
        alg_row("MaxPower", &cdf.max_power, &cdf.wmmse),
        alg_row("RandPower", &cdf.rand_power, &cdf.wmmse),
    ];

    // Epsilon sweep: re-threshold each request's stored criterion ratio.
    let mut eps_sweep = Vec::new();
    if opts.full_solver_stats && !rows.is_empty() {
        let mut eps_values = cfg.eps_sweep.clone();
        eps_values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &eps in &eps_values {
            let mut acc = EpsAccum::default();
            for r in rows {
                let enhanced = r.ratio > eps;
                let rate = if enhanced { r.rate_warm.unwrap_or(r.rate_si) } else { r.rate_pred };
                acc.add(r.is_b, enhanced, rate);
            }
            eps_sweep.push(acc.row(eps));
        }
    }

    // Per-round statistics over contiguous request segments.
    let mut rounds = Vec::new();
    for (round, &start) in round_starts.iter().enumerate() {
        let end = round_starts.get(round + 1).copied().unwrap_or(rows.len());
        let segment = &rows[start..end];
        let requests = segment.len();
        let enhanced = segment.iter().filter(|r| r.enhanced).count();
        let (req_a, enh_a) = segment
            .iter()
            .filter(|r| !r.is_b)
            .fold((0usize, 0usize), |(rq, en), r| (rq + 1, en + usize::from(r.enhanced)));
        let (req_b, enh_b) = segment
            .iter()
            .filter(|r| r.is_b)
            .fold((0usize, 0usize), |(rq, en), r| (rq + 1, en + usize::from(r.enhanced)));
        let rate = |num: usize, den: usize| if den > 0 { num as f64 / den as f64 } else { 0.0 };
        let (dnn_eval_a, dnn_eval_b) = round_evals[round];
        rounds.push(RoundRow {
            round,
            requests,
            enhanced,
            enhancing_rate: rate(enhanced, requests),
            requests_a: req_a,
            enhanced_a: enh_a,
            enhancing_rate_a: rate(enh_a, req_a),
            requests_b: req_b,
            enhanced_b: enh_b,
            enhancing_rate_b: rate(enh_b, req_b),
            si_mean: mean(&segment.iter().map(|r| r.rate_si).collect::<Vec<_>>()),
            dnn_eval_a,
            dnn_eval_b,
            wmmse_eval_a,
            wmmse_eval_b,
        });
    }

    let iteration_stats = if opts.full_solver_stats && !rows.is_empty() {
        let mut cold: Vec<f64> = rows.iter().map(|r| r.iters_cold as f64).collect();
        let mut warm: Vec<f64> = rows.iter().filter_map(|r| r.iters_warm.map(|x| x as f64)).collect();
        Some(IterationStats {
            count: rows.len(),
            mean_cold: mean(&cold),
            mean_warm: mean(&warm),
            median_cold: median(&mut cold),
            median_warm: median(&mut warm),
        })
    } else {
        None
    };

    // Round-0 uncertainty medians per topology.
    let round0_end = round_starts.get(1).copied().unwrap_or(rows.len());
    let mut epi_a: Vec<f64> =
        rows[..round0_end].iter().filter(|r| !r.is_b).map(|r| r.epi_mean).collect();
    let mut epi_b: Vec<f64> =
        rows[..round0_end].iter().filter(|r| r.is_b).map(|r| r.epi_mean).collect();
    let uncertainty = UncertaintyStats {
        round0_median_epi_a: median(&mut epi_a),
        round0_median_epi_b: median(&mut epi_b),
    };

    let enhanced_total = rows.iter().filter(|r| r.enhanced).count();
    MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config_hash: cfg.config_hash(),
        alpha: cfg.alpha,
        epsilon: cfg.epsilon,
        n_requests: rows.len(),
        rounds_completed: round_starts.len() - 1,
        enhancing_rate: if rows.is_empty() { 0.0 } else { enhanced_total as f64 / rows.len() as f64 },
        table,
        cdf,
        eps_sweep,
        rounds,
        iteration_stats,
        uncertainty,
    }
}

#[derive(Default)]
struct EpsAccum {
    n: usize,
    n_a: usize,
    n_b: usize,
    enh: usize,
    enh_a: usize,
    enh_b: usize,
    rate: f64,
    rate_a: f64,
    rate_b: f64,
}

impl EpsAccum {
    fn add(&mut self, is_b: bool, enhanced: bool, rate: f64) {
        self.n += 1;
        self.rate += rate;
        if enhanced {
            self.enh += 1;
        }
        if is_b {
            self.n_b += 1;
            self.rate_b += rate;
            if enhanced {
                self.enh_b += 1;
            }
        } else {
            self.n_a += 1;
            self.rate_a += rate;
            if enhanced {
                self.enh_a += 1;
            }
        }
    }

    fn row(&self, epsilon: f64) -> EpsRow {
        let frac = |num: usize, den: usize| if den > 0 { num as f64 / den as f64 } else { 0.0 };
        let avg = |sum: f64, den: usize| if den > 0 { sum / den as f64 } else { 0.0 };
        EpsRow {
            epsilon,
            enhancing_rate: frac(self.enh, self.n),
            enhancing_rate_a: frac(self.enh_a, self.n_a),
            enhancing_rate_b: frac(self.enh_b, self.n_b),
            si_mean: avg(self.rate, self.n),
            si_mean_a: avg(self.rate_a, self.n_a),
            si_mean_b: avg(self.rate_b, self.n_b),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::save_ensemble;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            n_links: 3,
            train_size: 40,
            test_size: 20,
            m: 2,
            layer_dims: vec![16],
            epochs: 3,
            batch_size: 16,
            sigma2: 1e-5,
            n_si: 5,
            master_seed: 9,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn training_stage_rejects_empty_dataset() {
        let cfg = ExperimentConfig { train_size: 0, ..tiny_config() };
        assert!(training_stage(&cfg).is_err());
    }

    #[test]
    fn training_stage_is_reproducible() {
        let cfg = tiny_config();
        let (s1, _) = training_stage(&cfg).unwrap();
        let (s2, _) = training_stage(&cfg).unwrap();
        assert_eq!(save_ensemble(&s1.ensemble, "h"), save_ensemble(&s2.ensemble, "h"));
        assert_eq!(s1.base_dataset.len(), cfg.train_size);
        assert!(s1.si_dataset.is_empty());
        assert_eq!(s1.round, 0);
    }

    #[test]
    fn training_labels_dominate_max_power() {
        let cfg = tiny_config();
        let topo = topology_a(&cfg).unwrap();
        let records = generate_labeled(
            &topo,
            cfg.train_size,
            cfg.master_seed,
            STREAM_TRAIN_DATA,
            &cfg.noise_model(),
            &cfg.wmmse_options(),
        )
        .unwrap();
        let noise = cfg.noise_model();
        for r in &records {
            let h = r.instance().unwrap();
            let p_star = PowerVector::new(r.p_star.clone().unwrap(), cfg.p_max).unwrap();
            let full = max_power(cfg.n_links, cfg.p_max);
            let star_rate = sum_rate_in(&h, &p_star, &noise, cfg.log_base);
            let full_rate = sum_rate_in(&h, &full, &noise, cfg.log_base);
            assert!(star_rate >= full_rate - 1e-9);
        }
    }

    #[test]
    fn slack_epsilon_never_enhances() {
        let cfg = ExperimentConfig { epsilon: 1e6, ..tiny_config() };
        let (mut state, _) = training_stage(&cfg).unwrap();
        let stream = RequestStream::from_config(&cfg).unwrap();
        for i in 0..10 {
            let (_, rec) = handle_request(&mut state, &stream.instance(i)).unwrap();
            assert!(rec.credible);
            assert!(!rec.enhanced);
        }
        assert!(state.si_dataset.is_empty());
    }

    #[test]
    fn strict_epsilon_enhances_and_respects_warm_start() {
        let cfg = ExperimentConfig { epsilon: 1e-6, ..tiny_config() };
        let (mut state, _) = training_stage(&cfg).unwrap();
        let stream = RequestStream::from_config(&cfg).unwrap();
        // Request 1 comes from topology B under the default 50/50 interleave.
        let h = stream.instance(1);
        assert_eq!(h.topology_id, "B");
        let (_, rec) = handle_request(&mut state, &h).unwrap();
        assert!(rec.enhanced);
        assert!(rec.achieved_rate >= rec.prediction_rate - 1e-9);
        assert_eq!(state.si_dataset.len(), 1);
        assert_eq!(rec.enhanced, rec.criterion_ratio > cfg.epsilon);
    }

    #[test]
    fn single_member_ensemble_is_always_credible() {
        let cfg = ExperimentConfig { m: 1, ..tiny_config() };
        let (mut state, _) = training_stage(&cfg).unwrap();
        let stream = RequestStream::from_config(&cfg).unwrap();
        for i in 0..6 {
            let (_, rec) = handle_request(&mut state, &stream.instance(i)).unwrap();
            assert!(rec.credible, "zero epistemic variance must gate credible");
        }
    }

    #[test]
    fn retrain_threshold_semantics() {
        let cfg = tiny_config();
        let (mut state, _) = training_stage(&cfg).unwrap();
        let base_len = state.base_dataset.len();
        let sample = state.base_dataset[0].clone();
        for _ in 0..cfg.n_si - 1 {
            state.si_dataset.push(sample.clone());
        }
        assert!(!maybe_retrain(&mut state).unwrap());
        assert_eq!(state.round, 0);

        state.si_dataset.push(sample.clone());
        assert!(maybe_retrain(&mut state).unwrap());
        assert_eq!(state.round, 1);
        assert!(state.si_dataset.is_empty());
        assert_eq!(state.base_dataset.len(), base_len + cfg.n_si);

        assert!(!maybe_retrain(&mut state).unwrap());
        assert_eq!(state.round, 1);
    }

    #[test]
    fn empty_stream_gives_empty_report() {
        let cfg = ExperimentConfig { test_size: 0, ..tiny_config() };
        let (mut state, _) = training_stage(&cfg).unwrap();
        let opts = RunOptions { eval_set_size: 4, ..RunOptions::evaluation(&cfg) };
        let report = run_with_state(&mut state, &opts).unwrap();
        assert_eq!(report.n_requests, 0);
        assert_eq!(report.rounds_completed, 0);
        assert_eq!(report.enhancing_rate, 0.0);
        assert!(report.cdf.wmmse.total.is_empty());
        assert!(report.eps_sweep.is_empty());
    }

    #[test]
    fn run_produces_paired_columns_and_consistent_gate() {
        let cfg = tiny_config();
        let (mut state, _) = training_stage(&cfg).unwrap();
        let opts = RunOptions { eval_set_size: 4, ..RunOptions::evaluation(&cfg) };
        let report = run_with_state(&mut state, &opts).unwrap();

        assert_eq!(report.n_requests, cfg.test_size);
        for row in &report.table {
            assert!(ALGORITHMS.contains(&row.algorithm.as_str()));
        }
        assert_eq!(report.table[0].algorithm, "WMMSE");
        assert!((report.table[0].pct_total - 100.0).abs() < 1e-9);
        // Every algorithm is scored on the same instances.
        assert_eq!(report.cdf.wmmse.total.len(), cfg.test_size);
        assert_eq!(report.cdf.max_power.total.len(), cfg.test_size);
        assert_eq!(report.cdf.rand_power.total.len(), cfg.test_size);
        assert_eq!(
            report.cdf.wmmse.topo_a.len() + report.cdf.wmmse.topo_b.len(),
            cfg.test_size
        );

        // Epsilon sweep is ordered and monotone in the enhancing rate.
        assert_eq!(report.eps_sweep.len(), cfg.eps_sweep.len());
        for pair in report.eps_sweep.windows(2) {
            assert!(pair[0].epsilon < pair[1].epsilon);
            assert!(pair[0].enhancing_rate >= pair[1].enhancing_rate);
        }
    }

    #[test]
    fn full_run_is_reproducible_from_master_seed() {
        let cfg = tiny_config();
        let opts = RunOptions { eval_set_size: 4, ..RunOptions::evaluation(&cfg) };
        let (mut s1, _) = training_stage(&cfg).unwrap();
        let r1 = run_with_state(&mut s1, &opts).unwrap();
        let (mut s2, _) = training_stage(&cfg).unwrap();
        let r2 = run_with_state(&mut s2, &opts).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn rounds_fire_and_are_segmented() {
        let cfg = ExperimentConfig { epsilon: 1e-6, n_si: 4, test_size: 40, ..tiny_config() };
        let (mut state, _) = training_stage(&cfg).unwrap();
        let opts = RunOptions {
            n_requests: 40,
            stop_after_rounds: Some(2),
            round_tail: 3,
            full_solver_stats: false,
            eval_set_size: 4,
        };
        let report = run_with_state(&mut state, &opts).unwrap();
        assert!(report.rounds_completed >= 2, "expected retrains to fire");
        assert!(report.rounds.len() >= 3);
        let total: usize = report.rounds.iter().map(|r| r.requests).sum();
        assert_eq!(total, report.n_requests);
        // Completed rounds hold exactly n_si enhanced requests.
        for r in &report.rounds[..report.rounds_completed] {
            assert_eq!(r.enhanced, cfg.n_si);
        }
        assert!(report.iteration_stats.is_none());
    }
}
