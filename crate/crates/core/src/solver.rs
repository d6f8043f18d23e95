//! Power-allocation solvers: the WMMSE block-coordinate method, trivial
//! baselines, and an exhaustive grid oracle for small networks.
//!
//! WMMSE runs on amplitudes `v_n = sqrt(p_n)` with the scalar-channel updates
//!
//! ```text
//! u_n = g_nn v_n / (sigma^2 + sum_m g_nm^2 v_m^2)
//! w_n = 1 / (1 - u_n g_nn v_n)
//! v_n = w_n u_n g_nn / (sum_m w_m u_m^2 g_mn^2),   clipped to [0, sqrt(Pmax)]
//! ```
//!
//! Each of the three blocks is an exact minimizer of the weighted-MSE
//! surrogate, so the sum rate evaluated after every full sweep is
//! non-decreasing.

use rand::Rng;

use crate::error::{Error, Result};
use crate::netsim::{sum_rate, ChannelInstance, NoiseModel, PowerVector};

/// Outcome of a solver run.
#[derive(Debug, Clone)]
pub struct SolverResult {
    pub p: PowerVector,
    /// Number of update sweeps performed (grid oracle: points evaluated).
    pub iterations: usize,
    /// Sum rate (natural log) after the initial point and after every sweep.
    pub objective_trace: Vec<f64>,
}

/// WMMSE stopping and feasibility parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WmmseOptions {
    pub p_max: f64,
    pub max_iter: usize,
    /// Convergence threshold on the largest amplitude change per sweep.
    pub tol: f64,
}

impl Default for WmmseOptions {
    fn default() -> Self {
        WmmseOptions { p_max: 1.0, max_iter: 500, tol: 1e-5 }
    }
}

/// Runs WMMSE from `p_init` (or full power when absent) and returns the
/// final feasible allocation together with its objective trace.
pub fn wmmse(
    h: &ChannelInstance,
    noise: &NoiseModel,
    p_init: Option<&PowerVector>,
    opts: &WmmseOptions,
) -> Result<SolverResult> {
    let n = h.n_links();
    if h.gains.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return Err(Error::invalid("channel gains must be finite and nonnegative"));
    }
    if let Some(p) = p_init {
        if p.len() != n {
            return Err(Error::invalid("initial power length does not match channel size"));
        }
        if !p.is_feasible(opts.p_max) {
            return Err(Error::invalid("initial power outside [0, p_max]"));
        }
    }

    let v_max = opts.p_max.sqrt();
    let mut v: Vec<f64> = match p_init {
        Some(p) => p.iter().map(|&x| x.sqrt()).collect(),
        None => vec![v_max; n],
    };

    // Squared gains, reused every sweep.
    let g = &h.gains;
    let mut g2 = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            g2[i * n + j] = g[[i, j]] * g[[i, j]];
        }
    }

    let power_of = |v: &[f64]| -> PowerVector {
        PowerVector::new(
            v.iter().map(|&x| (x * x).clamp(0.0, opts.p_max)).collect(),
            opts.p_max,
        )
        .expect("clamped power is feasible")
    };

    let mut u = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut trace = Vec::with_capacity(opts.max_iter + 1);
    trace.push(sum_rate(h, &power_of(&v), noise));

    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        for k in 0..n {
            let mut denom = noise.sigma2;
            for m in 0..n {
                denom += g2[k * n + m] * v[m] * v[m];
            }
            u[k] = g[[k, k]] * v[k] / denom;
        }
        for k in 0..n {
            w[k] = 1.0 / (1.0 - u[k] * g[[k, k]] * v[k]);
        }
        let mut delta: f64 = 0.0;
        for k in 0..n {
            let mut denom = 0.0;
            for m in 0..n {
                denom += w[m] * u[m] * u[m] * g2[m * n + k];
            }
            let next = if denom > 0.0 {
                (w[k] * u[k] * g[[k, k]] / denom).clamp(0.0, v_max)
            } else {
                v[k]
            };
            delta = delta.max((next - v[k]).abs());
            v[k] = next;
        }
        iterations += 1;
        trace.push(sum_rate(h, &power_of(&v), noise));
        if delta < opts.tol {
            break;
        }
    }

    Ok(SolverResult { p: power_of(&v), iterations, objective_trace: trace })
}

/// Every link at maximum power.
pub fn max_power(n_links: usize, p_max: f64) -> PowerVector {
    PowerVector::full(n_links, p_max)
}

/// Independent uniform powers in `[0, p_max]`.
pub fn rand_power(n_links: usize, p_max: f64, rng: &mut impl Rng) -> PowerVector {
    PowerVector::new((0..n_links).map(|_| rng.random_range(0.0..p_max)).collect(), p_max)
        .expect("uniform draw is feasible")
}

/// Exhaustive search over `{0, p_max/(levels-1), ..., p_max}^N`. Ties are
/// broken toward the lexicographically smallest power vector. Only intended
/// as a test oracle; `N <= 3` and `levels <= 256`.
pub fn grid_oracle(
    h: &ChannelInstance,
    noise: &NoiseModel,
    levels: usize,
    p_max: f64,
) -> Result<SolverResult> {
    let n = h.n_links();
    if n > 3 {
        return Err(Error::Unsupported(format!("grid oracle limited to N <= 3, got {n}")));
    }
    if levels < 2 || levels > 256 {
        return Err(Error::Unsupported(format!("levels must be in [2, 256], got {levels}")));
    }
    let step = p_max / (levels - 1) as f64;
    let mut best_p = vec![0.0; n];
    let mut best_rate = f64::NEG_INFINITY;
    let mut idx = vec![0usize; n];
    let total = levels.pow(n as u32);
    let mut candidate = vec![0.0; n];
    for _ in 0..total {
        for k in 0..n {
            candidate[k] = (idx[k] as f64 * step).min(p_max);
        }
        let pv = PowerVector::new(candidate.clone(), p_max)?;
        let rate = sum_rate(h, &pv, noise);
        // Strict improvement keeps the lexicographically smallest argmax
        // because enumeration is lexicographic ascending.
        if rate > best_rate {
            best_rate = rate;
            best_p.copy_from_slice(&candidate);
        }
        // Advance the lexicographic counter, last coordinate fastest.
        for k in (0..n).rev() {
            idx[k] += 1;
            if idx[k] < levels {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok(SolverResult {
        p: PowerVector::new(best_p, p_max)?,
        iterations: total,
        objective_trace: vec![best_rate],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::{make_topology, sample_channel};
    use crate::seeds::rng_from;
    use ndarray::Array2;

    fn instance_from_gains(gains: Array2<f64>) -> ChannelInstance {
        ChannelInstance { topology_id: "T".into(), seed: 0, gains }
    }

    fn noise() -> NoiseModel {
        NoiseModel::new(1.0).unwrap()
    }

    #[test]
    fn wmmse_single_link_goes_full_power() {
        let h = instance_from_gains(Array2::from_elem((1, 1), 0.8));
        let res = wmmse(&h, &noise(), None, &WmmseOptions::default()).unwrap();
        assert_eq!(res.p[0], 1.0);
    }

    #[test]
    fn wmmse_decoupled_links_go_full_power() {
        let mut gains = Array2::zeros((2, 2));
        gains[[0, 0]] = 0.9;
        gains[[1, 1]] = 1.3;
        let h = instance_from_gains(gains);
        let res = wmmse(&h, &noise(), None, &WmmseOptions::default()).unwrap();
        assert_eq!(res.p[0], 1.0);
        assert_eq!(res.p[1], 1.0);
    }

    #[test]
    fn wmmse_near_grid_oracle_on_two_links() {
        let topo = make_topology(2, "A", &mut rng_from(11, 0, 0)).unwrap();
        let nz = NoiseModel::new(1e-4).unwrap();
        let opts = WmmseOptions::default();
        let mut ratio_acc = 0.0;
        let count = 200;
        for s in 0..count {
            let h = sample_channel(&topo, s as u64);
            let got = wmmse(&h, &nz, None, &opts).unwrap();
            let oracle = grid_oracle(&h, &nz, 201, opts.p_max).unwrap();
            let best = oracle.objective_trace[0];
            let rate = sum_rate(&h, &got.p, &nz);
            ratio_acc += rate / best;
        }
        let mean_ratio = ratio_acc / count as f64;
        assert!(mean_ratio >= 0.95, "mean ratio {mean_ratio}");
    }

    #[test]
    fn wmmse_trace_is_monotone() {
        let topo = make_topology(10, "A", &mut rng_from(12, 0, 0)).unwrap();
        let nz = NoiseModel::new(1e-5).unwrap();
        for s in 0..50u64 {
            let h = sample_channel(&topo, s);
            let res = wmmse(&h, &nz, None, &WmmseOptions::default()).unwrap();
            for pair in res.objective_trace.windows(2) {
                assert!(pair[1] >= pair[0] - 1e-9, "trace dipped: {} -> {}", pair[0], pair[1]);
            }
        }
    }

    #[test]
    fn wmmse_warm_start_never_hurts() {
        let topo = make_topology(5, "A", &mut rng_from(13, 0, 0)).unwrap();
        let nz = NoiseModel::new(1e-5).unwrap();
        let opts = WmmseOptions::default();
        for s in 0..50u64 {
            let h = sample_channel(&topo, s);
            let mut rng = rng_from(14, 0, s);
            let q = rand_power(5, opts.p_max, &mut rng);
            let before = sum_rate(&h, &q, &nz);
            let res = wmmse(&h, &nz, Some(&q), &opts).unwrap();
            let after = sum_rate(&h, &res.p, &nz);
            assert!(after >= before - 1e-9, "warm start regressed: {before} -> {after}");
        }
    }

    #[test]
    fn wmmse_dominates_max_power_from_cold_start() {
        let topo = make_topology(6, "A", &mut rng_from(15, 0, 0)).unwrap();
        let nz = NoiseModel::new(1e-5).unwrap();
        let opts = WmmseOptions::default();
        for s in 0..50u64 {
            let h = sample_channel(&topo, s);
            let full = max_power(6, opts.p_max);
            let res = wmmse(&h, &nz, None, &opts).unwrap();
            assert!(sum_rate(&h, &res.p, &nz) >= sum_rate(&h, &full, &nz) - 1e-9);
        }
    }

    #[test]
    fn wmmse_rejects_bad_inputs() {
        let h = instance_from_gains(Array2::from_elem((2, 2), f64::NAN));
        assert!(wmmse(&h, &noise(), None, &WmmseOptions::default()).is_err());

        let h = instance_from_gains(Array2::from_elem((2, 2), 1.0));
        let q = PowerVector::full(2, 2.0); // exceeds p_max = 1
        assert!(wmmse(&h, &noise(), Some(&q), &WmmseOptions::default()).is_err());
    }

    #[test]
    fn max_power_values() {
        let p = max_power(10, 1.0);
        assert_eq!(p.len(), 10);
        assert!(p.iter().all(|&x| x == 1.0));
        assert_eq!(max_power(1, 1.0).as_slice(), &[1.0]);
    }

    #[test]
    fn rand_power_support_and_determinism() {
        let mut rng = rng_from(16, 0, 0);
        let p = rand_power(8, 1.0, &mut rng);
        assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let p2 = rand_power(8, 1.0, &mut rng_from(16, 0, 0));
        assert_eq!(p, p2);
    }

    #[test]
    fn rand_power_mean_is_half() {
        let mut rng = rng_from(17, 0, 0);
        let draws = 100_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            acc += rand_power(1, 1.0, &mut rng)[0];
        }
        let mean = acc / draws as f64;
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn grid_oracle_trivial_cases() {
        let h = instance_from_gains(Array2::from_elem((1, 1), 1.0));
        let res = grid_oracle(&h, &noise(), 101, 1.0).unwrap();
        assert_eq!(res.p[0], 1.0);

        let mut gains = Array2::zeros((2, 2));
        gains[[0, 0]] = 1.0;
        gains[[1, 1]] = 1.0;
        let h = instance_from_gains(gains);
        let res = grid_oracle(&h, &noise(), 51, 1.0).unwrap();
        assert_eq!(res.p.as_slice(), &[1.0, 1.0]);
        assert_eq!(res.objective_trace[0], sum_rate(&h, &res.p, &noise()));
    }

    #[test]
    fn grid_oracle_rejects_large_problems() {
        let h = instance_from_gains(Array2::from_elem((4, 4), 1.0));
        assert!(matches!(grid_oracle(&h, &noise(), 11, 1.0), Err(Error::Unsupported(_))));
        let h = instance_from_gains(Array2::from_elem((2, 2), 1.0));
        assert!(matches!(grid_oracle(&h, &noise(), 1000, 1.0), Err(Error::Unsupported(_))));
    }
}
