//! Canonical two-node instances used across the test suites, the
//! shipped scenario files, and the documentation.
//!
//! * Instance A: one uncongested line, a quadratic generator against a
//!   flat 10 $/MWh benefit. Clears at 5 MW with a uniform price.
//! * Instance B: instance A with the line derated to 3 MW, so the
//!   price splits into 6 at the generator and 10 at the load.
//! * Instance C: two periods with 1 MWh of storage at the load node
//!   and benefits of 2 then 10 $/MWh; arbitrage charges the device to
//!   capacity in the cheap period.

use nalgebra::DVector;

use crate::costs::{CostFunction, CostSchedule};
use crate::dispatch::ScenarioSpec;
use crate::network::Line;
use crate::storage::StorageFleet;

fn two_node(line_capacity: f64) -> Vec<Line> {
    vec![Line::new(0, 1, 0.1, line_capacity)]
}

pub fn instance_a() -> ScenarioSpec {
    let costs = CostSchedule::uniform(
        vec![
            CostFunction::quadratic(1.0, 0.0, 0.0, 100.0).unwrap(),
            CostFunction::linear(10.0, -6.0, 0.0).unwrap(),
        ],
        1,
    );
    ScenarioSpec::new(2, 1, two_node(100.0), costs, StorageFleet::none(2), 0, 1.0).unwrap()
}

pub fn instance_b() -> ScenarioSpec {
    let costs = CostSchedule::uniform(
        vec![
            CostFunction::quadratic(1.0, 0.0, 0.0, 100.0).unwrap(),
            CostFunction::linear(10.0, -6.0, 0.0).unwrap(),
        ],
        1,
    );
    ScenarioSpec::new(2, 1, two_node(3.0), costs, StorageFleet::none(2), 0, 1.0).unwrap()
}

fn instance_c_costs() -> CostSchedule {
    let generator = CostFunction::quadratic(1.0, 0.0, 0.0, 100.0).unwrap();
    let cheap = CostFunction::linear(2.0, -10.0, 0.0).unwrap();
    let dear = CostFunction::linear(10.0, -10.0, 0.0).unwrap();
    CostSchedule::new(vec![vec![generator.clone(), generator], vec![cheap, dear]]).unwrap()
}

pub fn instance_c() -> ScenarioSpec {
    let storage = StorageFleet::new(DVector::from_column_slice(&[0.0, 1.0])).unwrap();
    ScenarioSpec::new(2, 2, two_node(100.0), instance_c_costs(), storage, 0, 1.0).unwrap()
}

/// Instance C with the device removed; periods decouple.
pub fn instance_c_without_storage() -> ScenarioSpec {
    ScenarioSpec::new(
        2,
        2,
        two_node(100.0),
        instance_c_costs(),
        StorageFleet::none(2),
        0,
        1.0,
    )
    .unwrap()
}
