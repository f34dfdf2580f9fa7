//! Shared oracles and the cached random-scenario corpus.
//!
//! Every oracle here reaches the answer by a route independent of the
//! interior-point solver: closed-form optimality algebra, exhaustive
//! grid enumeration, or direct recursion on the problem data.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use srk_core::corpus;
use srk_core::costs::evaluate_cost;
use srk_core::dispatch::{solve_dispatch, EquilibriumSolution, ScenarioSpec};
use srk_core::settlement::{settle, SettlementReport};

pub const CORPUS_SIZE: usize = 200;
pub const CORPUS_BASE_SEED: u64 = 1000;

pub struct SolvedScenario {
    pub scenario: ScenarioSpec,
    pub solution: EquilibriumSolution,
    pub report: SettlementReport,
}

/// The 200-scenario random corpus, solved and settled once per test
/// binary run.
pub fn solved_corpus() -> &'static [SolvedScenario] {
    static CORPUS: OnceLock<Vec<SolvedScenario>> = OnceLock::new();
    CORPUS.get_or_init(|| {
        (0..CORPUS_SIZE)
            .map(|index| {
                let seed = CORPUS_BASE_SEED + index as u64;
                let scenario = corpus::random_scenario(seed);
                let solution = solve_dispatch(&scenario)
                    .unwrap_or_else(|e| panic!("corpus seed {seed} failed to solve: {e}"));
                let report = settle(&scenario, &solution)
                    .unwrap_or_else(|e| panic!("corpus seed {seed} failed to settle: {e}"));
                SolvedScenario {
                    scenario,
                    solution,
                    report,
                }
            })
            .collect()
    })
}

/// Maximizes a concave function on [lo, hi] by ternary search.
pub fn ternary_max(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..200 {
        let a = lo + (hi - lo) / 3.0;
        let b = hi - (hi - lo) / 3.0;
        if f(a) < f(b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    f(0.5 * (lo + hi))
}

/// Grid-search oracle for the two-period storage arbitrage instance:
/// sweeps the charged energy q, optimizing each period's dispatch by
/// ternary search on its concave welfare. Returns (q*, welfare*).
pub fn storage_arbitrage_oracle(
    cheap_price: f64,
    dear_price: f64,
    demand_cap: f64,
    device_capacity: f64,
    grid_step: f64,
) -> (f64, f64) {
    let mut best_q = 0.0;
    let mut best_welfare = f64::NEG_INFINITY;
    let steps = (device_capacity / grid_step).round() as usize;
    for i in 0..=steps {
        let q = i as f64 * grid_step;
        // Period 0: demand d plus charging q supplied at quadratic
        // cost (g = q + d), benefit cheap_price per MWh consumed.
        let w0 = ternary_max(0.0, demand_cap, |d| {
            cheap_price * d - (q + d) * (q + d)
        });
        // Period 1: discharge q reduces the generation needed.
        let w1 = ternary_max(0.0, demand_cap, |e| {
            dear_price * e - (e - q) * (e - q)
        });
        let welfare = w0 + w1;
        if welfare > best_welfare {
            best_welfare = welfare;
            best_q = q;
        }
    }
    (best_q, best_welfare)
}

/// Exhaustive dispatch oracle for two-node, two-period scenarios with
/// at most one storage device: enumerates the storage state grid and
/// the sending-node injection grid at `step` MW resolution.
pub fn brute_force_two_node(scenario: &ScenarioSpec, step: f64) -> f64 {
    assert_eq!(scenario.num_nodes(), 2);
    assert_eq!(scenario.horizon(), 2);
    let storage_nodes = scenario.storage().storage_nodes();
    assert!(storage_nodes.len() <= 1);
    let (storage_node, capacity) = match storage_nodes.first() {
        Some(&node) => (node, scenario.storage().capacity(node)),
        None => (0, 0.0),
    };
    let line = &scenario.lines()[0];
    let cap_fwd = line.capacity;
    let cap_rev = line.reverse_capacity();

    // Per-period minimum cost as a function of the storage draw.
    let period_cost = |k: usize, u: f64| -> f64 {
        let f0 = scenario.costs().at(0, k);
        let f1 = scenario.costs().at(1, k);
        let (u0, u1) = if storage_node == 0 { (u, 0.0) } else { (0.0, u) };
        let mut best = f64::INFINITY;
        let points = ((f0.v_max() - f0.v_min()) / step).round() as usize;
        for i in 0..=points {
            let v0 = (f0.v_min() + i as f64 * step).min(f0.v_max());
            let v1 = -v0 - u0 - u1;
            if v1 < f1.v_min() - 1e-9 || v1 > f1.v_max() + 1e-9 {
                continue;
            }
            // Flow out of node 0 equals its net power on a 2-node net.
            let flow = v0 + u0;
            if flow > cap_fwd + 1e-9 || -flow > cap_rev + 1e-9 {
                continue;
            }
            let cost = evaluate_cost(f0, v0).unwrap()
                + evaluate_cost(f1, v1.clamp(f1.v_min(), f1.v_max())).unwrap();
            best = best.min(cost);
        }
        best
    };

    let z_steps = (capacity / step).round() as usize;
    let mut best = f64::INFINITY;
    for i in 0..=z_steps {
        let z1 = i as f64 * step;
        // Memoize period-1 over distinct u(1) values implicitly: the
        // grid is small enough to evaluate directly.
        let c0 = period_cost(0, -z1);
        if !c0.is_finite() {
            continue;
        }
        for j in 0..=z_steps {
            let z2 = j as f64 * step;
            let c1 = period_cost(1, z1 - z2);
            if c1.is_finite() {
                best = best.min(c0 + c1);
            }
        }
    }
    best
}

/// Grid oracle for the two-period single-device feasibility question:
/// is there a reshaping q2 on the grid that absorbs the FSR profile?
pub fn sft_grid_oracle(
    fsr_profile: &DVector<f64>,
    device_capacity: f64,
    range: f64,
    step: f64,
) -> bool {
    let points = (2.0 * range / step).round() as usize;
    for i in 0..=points {
        let q0 = -range + i as f64 * step;
        if (q0 - fsr_profile[0]).abs() > 1e-9 {
            continue; // balance at period 0 pins q0 = s(0)
        }
        for j in 0..=points {
            let q1 = -range + j as f64 * step;
            if (q1 - fsr_profile[1]).abs() > 1e-9 {
                continue;
            }
            let soc1 = -q0;
            let soc2 = -q0 - q1;
            if soc1 >= -1e-9
                && soc1 <= device_capacity + 1e-9
                && soc2 >= -1e-9
                && soc2 <= device_capacity + 1e-9
            {
                return true;
            }
        }
    }
    false
}

/// Random balanced price/profile data for the ledger identity checks.
pub fn random_prices(rng: &mut impl rand::Rng, n: usize, horizon: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, horizon, |_, _| rng.gen_range(-20.0..60.0))
}

pub fn random_balanced_profiles(
    rng: &mut impl rand::Rng,
    horizon: usize,
) -> (DVector<f64>, DVector<f64>) {
    let supply = DVector::from_fn(horizon, |_, _| rng.gen_range(0.0..8.0));
    let mut demand = DVector::from_fn(horizon, |_, _| rng.gen_range(0.1..8.0));
    let scale = supply.sum() / demand.sum();
    demand *= scale;
    (supply, demand)
}
