use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use srk_core::rights::*;
use srk_core::sft::*;
use srk_core::{corpus, dispatch};

fn main() {
    let scenarios: Vec<_> = (0..200).map(|i| corpus::random_scenario(1000 + i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5555);
    for sample in 0..500 {
        let scenario = &scenarios[sample % 200];
        let n = scenario.num_nodes();
        let horizon = scenario.horizon();
        let num_directed = 2 * scenario.num_lines();
        let mut rights = Vec::new();
        for _ in 0..rng.gen_range(1..=3) {
            let i = rng.gen_range(0..n);
            let mut j = rng.gen_range(0..n);
            if i == j { j = (j + 1) % n; }
            let profile = DVector::from_fn(horizon, |_, _| rng.gen_range(0.0..2.0));
            rights.push(Right::Ftr(Ftr::new(i, j, profile).unwrap()));
        }
        if rng.gen_bool(0.6) {
            let l = rng.gen_range(0..num_directed);
            let cap = scenario.polytope().capacities[l];
            let profile = DVector::from_fn(horizon, |_, _| rng.gen_range(0.0..cap.max(1e-6)));
            rights.push(Right::Fgr(Fgr::new(l, profile).unwrap()));
        }
        for _ in 0..rng.gen_range(0..=2) {
            let node = rng.gen_range(0..n);
            let profile = DVector::from_fn(horizon, |_, _| rng.gen_range(-1.0..1.0));
            rights.push(Right::Fsr(Fsr::new(node, profile)));
        }
        for node in scenario.storage().storage_nodes() {
            if rng.gen_bool(0.5) {
                let b = scenario.storage().capacity(node);
                let profile = DVector::from_fn(horizon, |_, _| rng.gen_range(0.0..b));
                rights.push(Right::Ecr(Ecr::new(node, profile).unwrap()));
            }
        }
        let portfolio = aggregate(rights, n, num_directed, horizon).unwrap();
        let mut alpha = 1.0f64;
        for round in 0..40 {
            let candidate = portfolio.scale(alpha);
            match sft_check(&candidate, scenario.polytope(), scenario.storage(), 1e-6) {
                Ok(v) => { if v.is_feasible() { break; } }
                Err(e) => {
                    println!("sample {sample} scenario {} round {round} alpha {alpha}: {e}", sample % 200);
                    let _ = dispatch::solve_dispatch(scenario);
                    return;
                }
            }
            alpha *= 0.5;
        }
    }
    println!("no failure");
}
