//! Multi-period economic dispatch with storage: problem assembly,
//! nodal price extraction, and KKT certification.
//!
//! Decision variables are the net injections `V` (n x N) and storage
//! extractions `U` (n x N); the program minimizes total cost subject
//! to per-period membership of `v(k) + u(k)` in the injection polytope
//! and per-node membership of `u_i` in the storage capacity set. Duals
//! come back per constraint block:
//!
//! * `gamma(k)` on the power balance of period `k`,
//! * `mu(k)` on the 2m directed flow limits of period `k`,
//! * `nu_upper_i`, `nu_lower_i` on the state-of-charge bounds of node `i`,
//!
//! and nodal prices are `lambda(k) = gamma(k) 1 - H' mu(k)`.
//!
//! Variable ordering in the assembled program: injection variables
//! period-major (`v(0)` for all nodes, then `v(1)`, ...), followed by
//! extraction variables for storage-carrying nodes only, period-major
//! within each node position. Nodes without a device have `u = 0`
//! identically; their storage shadow prices are recovered in closed
//! form from the nodal prices afterwards.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::costs::{self, CostKind, CostSchedule};
use crate::network::{InjectionPolytope, Line, ShiftFactorMatrix};
use crate::solver::{ConvexProgram, SolveStatus};
use crate::storage::{CumulativeMatrix, StorageFleet};

/// A complete dispatch problem instance.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    num_nodes: usize,
    horizon: usize,
    lines: Vec<Line>,
    costs: CostSchedule,
    storage: StorageFleet,
    polytope: InjectionPolytope,
    period_hours: f64,
    reference_bus: usize,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Network(#[from] crate::network::NetworkError),
    #[error("cost schedule covers {found} nodes, expected {expected}")]
    CostNodeCount { expected: usize, found: usize },
    #[error("cost schedule covers {found} periods, expected {expected}")]
    CostHorizon { expected: usize, found: usize },
    #[error("storage fleet covers {found} nodes, expected {expected}")]
    StorageNodeCount { expected: usize, found: usize },
    #[error("horizon must be at least 1")]
    EmptyHorizon,
    #[error("{0}")]
    Storage(String),
    #[error("period_hours must be positive, got {0}")]
    InvalidPeriodHours(f64),
}

impl ScenarioSpec {
    pub fn new(
        num_nodes: usize,
        horizon: usize,
        lines: Vec<Line>,
        costs: CostSchedule,
        storage: StorageFleet,
        reference_bus: usize,
        period_hours: f64,
    ) -> Result<Self, ScenarioError> {
        if horizon == 0 {
            return Err(ScenarioError::EmptyHorizon);
        }
        if !(period_hours > 0.0) {
            return Err(ScenarioError::InvalidPeriodHours(period_hours));
        }
        if costs.num_nodes() != num_nodes {
            return Err(ScenarioError::CostNodeCount {
                expected: num_nodes,
                found: costs.num_nodes(),
            });
        }
        if costs.horizon() != horizon {
            return Err(ScenarioError::CostHorizon {
                expected: horizon,
                found: costs.horizon(),
            });
        }
        if storage.num_nodes() != num_nodes {
            return Err(ScenarioError::StorageNodeCount {
                expected: num_nodes,
                found: storage.num_nodes(),
            });
        }
        let polytope = crate::network::build_polytope(&lines, num_nodes, reference_bus)?;
        Ok(Self {
            num_nodes,
            horizon,
            lines,
            costs,
            storage,
            polytope,
            period_hours,
            reference_bus,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn costs(&self) -> &CostSchedule {
        &self.costs
    }

    pub fn storage(&self) -> &StorageFleet {
        &self.storage
    }

    pub fn polytope(&self) -> &InjectionPolytope {
        &self.polytope
    }

    pub fn shift_factors(&self) -> &ShiftFactorMatrix {
        &self.polytope.shift_factors
    }

    pub fn period_hours(&self) -> f64 {
        self.period_hours
    }

    pub fn reference_bus(&self) -> usize {
        self.reference_bus
    }
}

/// Primal dispatch plus every dual variable of the solved program.
#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    /// Net injections V, n x N.
    pub injections: DMatrix<f64>,
    /// Storage extractions U, n x N.
    pub extractions: DMatrix<f64>,
    /// Nodal prices, n x N.
    pub prices: DMatrix<f64>,
    /// System (balance) prices gamma, length N.
    pub system_prices: DVector<f64>,
    /// Directed line shadow prices mu, 2m x N.
    pub line_prices: DMatrix<f64>,
    /// Upper state-of-charge shadow prices, n x N.
    pub soc_upper_prices: DMatrix<f64>,
    /// Lower state-of-charge shadow prices, n x N.
    pub soc_lower_prices: DMatrix<f64>,
    /// Optimal total cost (negative of welfare).
    pub objective: f64,
}

impl EquilibriumSolution {
    /// Net nodal power `v(k) + u(k)` per period (columns).
    pub fn net_power(&self) -> DMatrix<f64> {
        &self.injections + &self.extractions
    }

    /// Price sequence of one node across the horizon.
    pub fn node_prices(&self, node: usize) -> DVector<f64> {
        self.prices.row(node).transpose()
    }
}

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("scenario reported infeasible, which valid scenarios cannot be: {0}")]
    InfeasibleScenario(String),
    #[error("solver failed with residual {residual}")]
    SolverFailure { residual: f64 },
    #[error(transparent)]
    Program(#[from] crate::solver::ProgramError),
    #[error(transparent)]
    Cost(#[from] crate::costs::CostError),
}

/// Index bookkeeping for the assembled program.
struct Layout {
    n: usize,
    horizon: usize,
    num_flow_rows: usize,
    storage_nodes: Vec<usize>,
}

impl Layout {
    fn v_var(&self, node: usize, period: usize) -> usize {
        period * self.n + node
    }

    fn u_var(&self, storage_pos: usize, period: usize) -> usize {
        self.n * self.horizon + storage_pos * self.horizon + period
    }

    fn num_vars(&self) -> usize {
        self.n * self.horizon + self.storage_nodes.len() * self.horizon
    }

    fn flow_row(&self, period: usize, directed_line: usize) -> usize {
        period * self.num_flow_rows + directed_line
    }

    fn soc_upper_row(&self, storage_pos: usize, period: usize) -> usize {
        self.horizon * self.num_flow_rows + storage_pos * self.horizon + period
    }

    fn soc_lower_row(&self, storage_pos: usize, period: usize) -> usize {
        self.horizon * self.num_flow_rows
            + self.storage_nodes.len() * self.horizon
            + storage_pos * self.horizon
            + period
    }
}

/// Converts one cost curve into solver objective terms on `var`.
fn install_cost(
    program: &mut ConvexProgram,
    var: usize,
    f: &costs::CostFunction,
) -> Result<(), DispatchError> {
    match f.kind() {
        CostKind::Quadratic { a, b } => {
            program.add_quadratic_cost(var, *a, *b)?;
        }
        CostKind::PiecewiseLinear { segments } => {
            // Max-of-lines form: each segment's affine extension,
            // anchored so the value agrees with the integral.
            let mut pieces = Vec::with_capacity(segments.len());
            for seg in segments {
                let anchor = costs::evaluate_cost(f, seg.from)?;
                pieces.push((seg.price, anchor - seg.price * seg.from));
            }
            program.add_pwl_cost(var, pieces)?;
        }
    }
    // Degenerate domains are pinned by an equality row during
    // assembly; regular domains become variable bounds.
    if f.v_min() == f.v_max() {
        program.add_eq_row(vec![(var, 1.0)], f.v_min());
    } else {
        program.set_bounds(var, f.v_min(), f.v_max())?;
    }
    Ok(())
}

/// Builds the dispatch program. Exposed for the oracle cross-checks
/// in the test suites; `solve_dispatch` is the normal entry point.
pub fn build_dispatch_program(scenario: &ScenarioSpec) -> Result<ConvexProgram, DispatchError> {
    let layout = make_layout(scenario);
    let n = layout.n;
    let horizon = layout.horizon;
    let h_entries = scenario.shift_factors().entries();

    let mut program = ConvexProgram::new(layout.num_vars());

    // Power balance rows first: their duals are the system prices.
    for k in 0..horizon {
        let mut row: Vec<(usize, f64)> = (0..n).map(|i| (layout.v_var(i, k), 1.0)).collect();
        for (pos, _) in layout.storage_nodes.iter().enumerate() {
            row.push((layout.u_var(pos, k), 1.0));
        }
        program.add_eq_row(row, 0.0);
    }

    for k in 0..horizon {
        for i in 0..n {
            install_cost(&mut program, layout.v_var(i, k), scenario.costs().at(i, k))?;
        }
    }

    // Directed line flow limits, period-major.
    for k in 0..horizon {
        for l in 0..layout.num_flow_rows {
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(n + layout.storage_nodes.len());
            for j in 0..n {
                let coeff = h_entries[(l, j)];
                if coeff != 0.0 {
                    row.push((layout.v_var(j, k), coeff));
                }
            }
            for (pos, &node) in layout.storage_nodes.iter().enumerate() {
                let coeff = h_entries[(l, node)];
                if coeff != 0.0 {
                    row.push((layout.u_var(pos, k), coeff));
                }
            }
            program.add_ineq_row(row, scenario.polytope().capacities[l]);
        }
    }

    // State-of-charge bounds: (L u_i)_k is the negated running sum.
    // Upper rows for every device first, then all lower rows, matching
    // the dual extraction layout.
    for (pos, &node) in layout.storage_nodes.iter().enumerate() {
        let b = scenario.storage().capacity(node);
        for k in 0..horizon {
            let row: Vec<(usize, f64)> = (0..=k).map(|l| (layout.u_var(pos, l), -1.0)).collect();
            program.add_ineq_row(row, b);
        }
    }
    for pos in 0..layout.storage_nodes.len() {
        for k in 0..horizon {
            let row: Vec<(usize, f64)> = (0..=k).map(|l| (layout.u_var(pos, l), 1.0)).collect();
            program.add_ineq_row(row, 0.0);
        }
    }

    Ok(program)
}

fn make_layout(scenario: &ScenarioSpec) -> Layout {
    Layout {
        n: scenario.num_nodes(),
        horizon: scenario.horizon(),
        num_flow_rows: 2 * scenario.num_lines(),
        storage_nodes: scenario.storage().storage_nodes(),
    }
}

/// Nodal prices from the balance and flow duals: column `k` equals
/// `gamma(k) * 1 - H' mu(k)`.
pub fn extract_lmps(
    gamma: &DVector<f64>,
    mu: &DMatrix<f64>,
    shift_factors: &ShiftFactorMatrix,
) -> DMatrix<f64> {
    let n = shift_factors.num_nodes();
    let horizon = gamma.len();
    let ht = shift_factors.entries().transpose();
    let mut prices = DMatrix::zeros(n, horizon);
    for k in 0..horizon {
        let col = &ht * mu.column(k);
        for i in 0..n {
            prices[(i, k)] = gamma[k] - col[i];
        }
    }
    prices
}

/// Solves the dispatch and returns the full equilibrium.
pub fn solve_dispatch(scenario: &ScenarioSpec) -> Result<EquilibriumSolution, DispatchError> {
    let layout = make_layout(scenario);
    let program = build_dispatch_program(scenario)?;
    let result = program.solve(1e-8);
    match result.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible(ref cert) => {
            return Err(DispatchError::InfeasibleScenario(format!(
                "infeasibility gap {:.3e}",
                cert.gap
            )));
        }
        _ => {
            return Err(DispatchError::SolverFailure {
                residual: result.kkt_residual,
            });
        }
    }

    let n = layout.n;
    let horizon = layout.horizon;
    let mut injections = DMatrix::zeros(n, horizon);
    for k in 0..horizon {
        for i in 0..n {
            injections[(i, k)] = result.x[layout.v_var(i, k)];
        }
    }
    let mut extractions = DMatrix::zeros(n, horizon);
    for (pos, &node) in layout.storage_nodes.iter().enumerate() {
        for k in 0..horizon {
            extractions[(node, k)] = result.x[layout.u_var(pos, k)];
        }
    }

    let system_prices = result.eq_duals.rows(0, horizon).into_owned();
    let mut line_prices = DMatrix::zeros(layout.num_flow_rows, horizon);
    for k in 0..horizon {
        for l in 0..layout.num_flow_rows {
            line_prices[(l, k)] = result.ineq_duals[layout.flow_row(k, l)];
        }
    }

    let prices = extract_lmps(&system_prices, &line_prices, scenario.shift_factors());

    let mut soc_upper = DMatrix::zeros(n, horizon);
    let mut soc_lower = DMatrix::zeros(n, horizon);
    for (pos, &node) in layout.storage_nodes.iter().enumerate() {
        for k in 0..horizon {
            soc_upper[(node, k)] = result.ineq_duals[layout.soc_upper_row(pos, k)];
            soc_lower[(node, k)] = result.ineq_duals[layout.soc_lower_row(pos, k)];
        }
    }
    // Nodes without a device never entered the program; their shadow
    // prices solve L'(nu_up - nu_lo) = lambda_i exactly, split by sign.
    let cumulative = CumulativeMatrix::new(horizon);
    for i in 0..n {
        if scenario.storage().capacity(i) > 0.0 {
            continue;
        }
        let lambda_i = prices.row(i).transpose();
        let diff = cumulative.solve_transpose(&lambda_i);
        for k in 0..horizon {
            soc_upper[(i, k)] = diff[k].max(0.0);
            soc_lower[(i, k)] = (-diff[k]).max(0.0);
        }
    }

    Ok(EquilibriumSolution {
        injections,
        extractions,
        prices,
        system_prices,
        line_prices,
        soc_upper_prices: soc_upper,
        soc_lower_prices: soc_lower,
        objective: result.objective,
    })
}

/// Residual report of the equilibrium conditions.
#[derive(Debug, Clone)]
pub struct KktReport {
    /// Distance of each nodal price from the cost subgradient interval.
    pub stationarity_cost: f64,
    /// Residual of `L'(nu_up - nu_lo) = lambda_i` per node.
    pub stationarity_storage: f64,
    /// Balance, flow-limit, state-of-charge, and domain violations.
    pub primal_feasibility: f64,
    /// Most negative dual, clamped at zero when all are nonnegative.
    pub dual_nonnegativity: f64,
    /// Largest complementary-slackness product.
    pub complementarity: f64,
    /// Informational: max entry of `Lambda - (gamma 1 - H' mu)`.
    pub lambda_consistency: f64,
    pub pass: bool,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.stationarity_cost
            .max(self.stationarity_storage)
            .max(self.primal_feasibility)
            .max(self.dual_nonnegativity)
            .max(self.complementarity)
    }
}

/// Checks the solution against the full optimality system at `tol`.
pub fn verify_kkt(scenario: &ScenarioSpec, sol: &EquilibriumSolution, tol: f64) -> KktReport {
    let n = scenario.num_nodes();
    let horizon = scenario.horizon();
    let cumulative = CumulativeMatrix::new(horizon);

    // Stationarity against the cost curves; the kink window scales
    // with the verification tolerance.
    let mut stationarity_cost: f64 = 0.0;
    for i in 0..n {
        for k in 0..horizon {
            let f = scenario.costs().at(i, k);
            let v = sol.injections[(i, k)];
            let v_tol = tol.max(1e-9) * (1.0 + v.abs());
            let distance = match costs::subgradient_interval(f, v, v_tol) {
                Ok(interval) => interval.distance(sol.prices[(i, k)]),
                Err(_) => f64::INFINITY, // outside the domain entirely
            };
            stationarity_cost = stationarity_cost.max(distance);
        }
    }

    let mut stationarity_storage: f64 = 0.0;
    for i in 0..n {
        let diff = DVector::from_fn(horizon, |k, _| {
            sol.soc_upper_prices[(i, k)] - sol.soc_lower_prices[(i, k)]
        });
        let folded = cumulative.apply_transpose(&diff);
        for k in 0..horizon {
            stationarity_storage = stationarity_storage.max((folded[k] - sol.prices[(i, k)]).abs());
        }
    }

    let mut primal: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    let net = sol.net_power();
    let capacities = &scenario.polytope().capacities;
    for k in 0..horizon {
        let x = net.column(k).into_owned();
        primal = primal.max(x.sum().abs());
        let flows = scenario.shift_factors().flows(&x);
        for l in 0..flows.len() {
            let slack = capacities[l] - flows[l];
            primal = primal.max(-slack);
            complementarity = complementarity.max((sol.line_prices[(l, k)] * slack).abs());
        }
        for i in 0..n {
            let f = scenario.costs().at(i, k);
            let v = sol.injections[(i, k)];
            primal = primal.max(f.v_min() - v).max(v - f.v_max());
        }
    }
    for i in 0..n {
        let u_i = sol.extractions.row(i).transpose();
        let soc = cumulative.apply(&u_i);
        let b = scenario.storage().capacity(i);
        for k in 0..horizon {
            primal = primal.max(-soc[k]).max(soc[k] - b);
            complementarity = complementarity.max((sol.soc_lower_prices[(i, k)] * soc[k]).abs());
            complementarity =
                complementarity.max((sol.soc_upper_prices[(i, k)] * (b - soc[k])).abs());
        }
    }

    let mut dual_nonnegativity: f64 = 0.0;
    for v in sol.line_prices.iter() {
        dual_nonnegativity = dual_nonnegativity.max(-v);
    }
    for v in sol
        .soc_upper_prices
        .iter()
        .chain(sol.soc_lower_prices.iter())
    {
        dual_nonnegativity = dual_nonnegativity.max(-v);
    }

    let recomputed = extract_lmps(
        &sol.system_prices,
        &sol.line_prices,
        scenario.shift_factors(),
    );
    let lambda_consistency = (&recomputed - &sol.prices).amax();

    let report = KktReport {
        stationarity_cost,
        stationarity_storage,
        primal_feasibility: primal,
        dual_nonnegativity,
        complementarity,
        lambda_consistency,
        pass: false,
    };
    KktReport {
        pass: report.max_residual() <= tol,
        ..report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_abs_diff_eq;

    #[test]
    fn instance_a_clears_at_marginal_benefit() {
        let scenario = fixtures::instance_a();
        let sol = solve_dispatch(&scenario).unwrap();
        assert_abs_diff_eq!(sol.injections[(0, 0)], 5.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.injections[(1, 0)], -5.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.prices[(0, 0)], 10.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.prices[(1, 0)], 10.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.objective, -25.0, epsilon = 1e-6);
        assert!(verify_kkt(&scenario, &sol, 1e-6).pass);
    }

    #[test]
    fn instance_b_splits_prices_across_congested_line() {
        let scenario = fixtures::instance_b();
        let sol = solve_dispatch(&scenario).unwrap();
        assert_abs_diff_eq!(sol.injections[(0, 0)], 3.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.prices[(0, 0)], 6.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.prices[(1, 0)], 10.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.line_prices[(0, 0)], 4.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.line_prices[(1, 0)], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.objective, -21.0, epsilon = 1e-6);
        assert!(verify_kkt(&scenario, &sol, 1e-6).pass);
    }

    #[test]
    fn instance_c_arbitrages_storage_to_capacity() {
        let scenario = fixtures::instance_c();
        let sol = solve_dispatch(&scenario).unwrap();
        // Storage at node 2 charges 1 MWh in the cheap period and
        // discharges it in the expensive one.
        assert_abs_diff_eq!(sol.extractions[(1, 0)], -1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.extractions[(1, 1)], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.prices[(1, 0)], 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.prices[(1, 1)], 10.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.injections[(0, 0)], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.injections[(0, 1)], 5.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.injections[(1, 0)], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.injections[(1, 1)], -6.0, epsilon = 1e-6);
        // Shadow prices on the node-2 device: nu_up = (8, 0),
        // nu_lo = (0, 10), pinned by complementarity.
        assert_abs_diff_eq!(sol.soc_upper_prices[(1, 0)], 8.0, epsilon = 1e-5);
        assert_abs_diff_eq!(sol.soc_upper_prices[(1, 1)], 0.0, epsilon = 1e-5);
        assert_abs_diff_eq!(sol.soc_lower_prices[(1, 0)], 0.0, epsilon = 1e-5);
        assert_abs_diff_eq!(sol.soc_lower_prices[(1, 1)], 10.0, epsilon = 1e-5);
        assert!(verify_kkt(&scenario, &sol, 1e-6).pass);
    }

    #[test]
    fn uncongested_duals_give_uniform_prices() {
        let gamma = DVector::from_column_slice(&[7.0]);
        let mu = DMatrix::zeros(2, 1);
        let lines = vec![Line::new(0, 1, 0.1, 100.0)];
        let h = crate::network::build_shift_factors(&lines, 2, 0).unwrap();
        let prices = extract_lmps(&gamma, &mu, &h);
        assert_abs_diff_eq!(prices[(0, 0)], 7.0);
        assert_abs_diff_eq!(prices[(1, 0)], 7.0);
    }

    #[test]
    fn doubling_mu_doubles_price_spread() {
        let lines = vec![Line::new(0, 1, 0.1, 3.0)];
        let h = crate::network::build_shift_factors(&lines, 2, 0).unwrap();
        let gamma = DVector::from_column_slice(&[8.0]);
        let mut mu = DMatrix::zeros(2, 1);
        mu[(0, 0)] = 4.0;
        let base = extract_lmps(&gamma, &mu, &h);
        mu[(0, 0)] = 8.0;
        let doubled = extract_lmps(&gamma, &mu, &h);
        let spread = base[(1, 0)] - base[(0, 0)];
        let spread2 = doubled[(1, 0)] - doubled[(0, 0)];
        assert_abs_diff_eq!(spread2, 2.0 * spread, epsilon = 1e-12);
    }

    #[test]
    fn perturbed_prices_fail_verification() {
        let scenario = fixtures::instance_c();
        let mut sol = solve_dispatch(&scenario).unwrap();
        // Push the first-period price at node 2 from 2 to 3: the
        // storage stationarity identity breaks by >= 1.
        sol.prices[(1, 0)] = 3.0;
        let report = verify_kkt(&scenario, &sol, 1e-6);
        assert!(!report.pass);
        assert!(report.stationarity_storage >= 1.0 - 1e-9);
    }

    #[test]
    fn all_zero_point_passes_on_zero_demand_scenario() {
        // Every domain is {0}; the all-zero primal/dual point is KKT.
        let n = 2;
        let costs = CostSchedule::uniform(
            vec![crate::costs::CostFunction::fixed_zero(); n],
            1,
        );
        let scenario = ScenarioSpec::new(
            2,
            1,
            vec![Line::new(0, 1, 0.1, 1.0)],
            costs,
            StorageFleet::none(2),
            0,
            1.0,
        )
        .unwrap();
        let sol = EquilibriumSolution {
            injections: DMatrix::zeros(2, 1),
            extractions: DMatrix::zeros(2, 1),
            prices: DMatrix::zeros(2, 1),
            system_prices: DVector::zeros(1),
            line_prices: DMatrix::zeros(2, 1),
            soc_upper_prices: DMatrix::zeros(2, 1),
            soc_lower_prices: DMatrix::zeros(2, 1),
            objective: 0.0,
        };
        assert!(verify_kkt(&scenario, &sol, 1e-6).pass);
    }

    #[test]
    fn no_storage_dispatch_matches_per_period_solves() {
        let scenario = fixtures::instance_c_without_storage();
        let sol = solve_dispatch(&scenario).unwrap();
        // Periods decouple: each clears at its own marginal benefit.
        assert!(verify_kkt(&scenario, &sol, 1e-6).pass);
        assert_abs_diff_eq!(sol.prices[(1, 0)], 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.prices[(1, 1)], 10.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.extractions.amax(), 0.0, epsilon = 1e-9);
    }
}
