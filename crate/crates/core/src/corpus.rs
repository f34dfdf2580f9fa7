//! Deterministic random scenario generation for property suites and
//! batch experiments.
//!
//! Every quantity with an extreme point — block boundaries, domain
//! edges, line capacities, device sizes — is snapped to the 0.01 MW
//! grid, so grid-search oracles at that resolution land exactly on the
//! optima of the piecewise-linear parts.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use nalgebra::DVector;

use crate::costs::{CostFunction, CostSchedule, Segment};
use crate::dispatch::ScenarioSpec;
use crate::network::Line;
use crate::storage::StorageFleet;

fn snap(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn random_generator_curve(rng: &mut ChaCha8Rng) -> CostFunction {
    if rng.gen_bool(0.55) {
        let a = rng.gen_range(0.1..1.5);
        let b = rng.gen_range(0.5..8.0);
        let v_max = snap(rng.gen_range(1.0..6.0));
        CostFunction::quadratic(a, b, 0.0, v_max).unwrap()
    } else {
        let blocks = rng.gen_range(1..=3);
        let mut segments = Vec::with_capacity(blocks);
        let mut price = rng.gen_range(0.5..6.0);
        let mut from = 0.0;
        for _ in 0..blocks {
            let to = snap(from + rng.gen_range(0.3..2.5));
            segments.push(Segment { price, from, to });
            from = to;
            price += rng.gen_range(0.5..8.0);
        }
        CostFunction::piecewise(segments).unwrap()
    }
}

fn random_demand_curve(rng: &mut ChaCha8Rng, price_factor: f64) -> CostFunction {
    let blocks = rng.gen_range(1..=3);
    // Build blocks from 0 leftwards with falling willingness to pay,
    // then reverse into nondecreasing left-to-right order.
    let mut rev = Vec::with_capacity(blocks);
    let mut price = rng.gen_range(8.0..30.0) * price_factor;
    let mut to = 0.0;
    for _ in 0..blocks {
        let from = snap(to - rng.gen_range(0.3..2.5));
        rev.push(Segment { price, from, to });
        to = from;
        price = (price - rng.gen_range(0.5..6.0)).max(0.05);
    }
    rev.reverse();
    CostFunction::piecewise(rev).unwrap()
}

/// Random connected topology: a spanning tree plus a few chords.
fn random_lines(rng: &mut ChaCha8Rng, n: usize) -> Vec<Line> {
    let mut lines = Vec::new();
    for i in 1..n {
        let parent = rng.gen_range(0..i);
        lines.push(Line::new(
            parent,
            i,
            rng.gen_range(0.05..1.0),
            snap(rng.gen_range(0.4..4.0)),
        ));
    }
    let extra = rng.gen_range(0..=n.min(2));
    for _ in 0..extra {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b && !lines.iter().any(|l| {
            (l.from_node == a && l.to_node == b) || (l.from_node == b && l.to_node == a)
        }) {
            lines.push(Line::new(
                a,
                b,
                rng.gen_range(0.05..1.0),
                snap(rng.gen_range(0.4..4.0)),
            ));
        }
    }
    lines
}

/// One random dispatch scenario: n in 2..=5, N in 1..=6, mixed
/// quadratic and block costs, storage on roughly half the nodes.
pub fn random_scenario(seed: u64) -> ScenarioSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=5);
    let horizon = rng.gen_range(1..=6);

    let lines = random_lines(&mut rng, n);

    // Node 0 always generates and node 1 always consumes, so the
    // market clears away from the all-zero point.
    let mut roles: Vec<bool> = vec![true, false];
    for _ in 2..n {
        roles.push(rng.gen_bool(0.5));
    }

    let mut table = Vec::with_capacity(n);
    for &is_generator in roles.iter().take(n) {
        let mut per_period = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let curve = if is_generator {
                random_generator_curve(&mut rng)
            } else {
                let factor = rng.gen_range(0.4..2.0);
                random_demand_curve(&mut rng, factor)
            };
            per_period.push(curve);
        }
        table.push(per_period);
    }
    let costs = CostSchedule::new(table).unwrap();

    let capacities = DVector::from_fn(n, |_, _| {
        if rng.gen_bool(0.45) {
            snap(rng.gen_range(0.2..1.8))
        } else {
            0.0
        }
    });
    let storage = StorageFleet::new(capacities).unwrap();

    ScenarioSpec::new(n, horizon, lines, costs, storage, 0, 1.0)
        .expect("generated scenario is structurally valid")
}

/// Restricted two-node, two-period scenario with at most one small
/// device, sized so a 0.01 MW brute-force grid stays tractable.
pub fn random_two_node_scenario(seed: u64) -> ScenarioSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_2_0de);
    let lines = vec![Line::new(
        0,
        1,
        rng.gen_range(0.05..1.0),
        snap(rng.gen_range(0.5..4.0)),
    )];
    let mut table = Vec::with_capacity(2);
    let mut gen_periods = Vec::with_capacity(2);
    let mut demand_periods = Vec::with_capacity(2);
    for _ in 0..2 {
        gen_periods.push(random_generator_curve(&mut rng));
        let factor = rng.gen_range(0.4..2.0);
        demand_periods.push(random_demand_curve(&mut rng, factor));
    }
    table.push(gen_periods);
    table.push(demand_periods);
    let costs = CostSchedule::new(table).unwrap();

    let mut capacities = DVector::zeros(2);
    if rng.gen_bool(0.7) {
        let node = rng.gen_range(0..2);
        capacities[node] = snap(rng.gen_range(0.2..1.0));
    }
    let storage = StorageFleet::new(capacities).unwrap();

    ScenarioSpec::new(2, 2, lines, costs, storage, 0, 1.0)
        .expect("generated scenario is structurally valid")
}
