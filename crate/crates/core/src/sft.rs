//! Simultaneous feasibility testing and revenue-adequacy auditing for
//! portfolios of transmission and storage rights.
//!
//! A portfolio (T, F, S, E) passes the test when some storage
//! injection schedule Q reshapes the rights' net injections into the
//! derated network:
//!
//! ```text
//!   t(k) - s(k) + q(k)  in  P(c - f(k))      for every period k,
//!   q_i                 in  U(b_i - e_i)     for every node i,
//! ```
//!
//! which guarantees the settled rent never exceeds the merchandising
//! surplus. `max_rent` solves the corresponding rent-maximization
//! linear programs; their optima equal the transmission congestion
//! surplus (transmission-only mode) and the full merchandising surplus
//! (combined mode), with the equilibrium dispatch itself furnishing an
//! optimal portfolio in closed form.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dispatch::EquilibriumSolution;
use crate::network::InjectionPolytope;
use crate::rights::{Fsr, Ftr, RentStatement, Right, RightsPortfolio};
use crate::settlement::SettlementReport;
use crate::solver::{ConvexProgram, FarkasCertificate, SolveStatus};
use crate::storage::{CumulativeMatrix, StorageFleet};

#[derive(Debug, Error)]
pub enum SftError {
    #[error("derated {what} is negative: {detail}")]
    IllPosedDerating { what: &'static str, detail: String },
    #[error("feasibility solver failed with residual {residual}")]
    SolverFailure { residual: f64 },
    #[error("portfolio spans {found} periods but the market has {expected}")]
    HorizonMismatch { expected: usize, found: usize },
    #[error("portfolio is not simultaneously feasible; audit refused")]
    NotSimultaneouslyFeasible,
    #[error(transparent)]
    Rights(#[from] crate::rights::RightsError),
    #[error(transparent)]
    Settlement(#[from] crate::settlement::SettlementError),
}

/// A constraint that holds with equality at the feasibility witness.
#[derive(Debug, Clone, PartialEq)]
pub enum BindingConstraint {
    Flow { period: usize, directed_line: usize },
    SocUpper { node: usize, period: usize },
    SocLower { node: usize, period: usize },
}

/// Nonzero components of an infeasibility ray, grouped by row family.
#[derive(Debug, Clone)]
pub struct InfeasibilityCertificate {
    pub balance_weights: Vec<(usize, f64)>,
    pub flow_weights: Vec<(usize, usize, f64)>,
    pub soc_upper_weights: Vec<(usize, usize, f64)>,
    pub soc_lower_weights: Vec<(usize, usize, f64)>,
    /// Certified negative gap of the weighted constraint combination.
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub enum SftVerdict {
    Feasible {
        /// Reshaping storage injections Q, n x N.
        witness: DMatrix<f64>,
        binding_constraints: Vec<BindingConstraint>,
    },
    Infeasible {
        certificate: InfeasibilityCertificate,
    },
}

impl SftVerdict {
    pub fn is_feasible(&self) -> bool {
        matches!(self, SftVerdict::Feasible { .. })
    }

    pub fn witness(&self) -> Option<&DMatrix<f64>> {
        match self {
            SftVerdict::Feasible { witness, .. } => Some(witness),
            SftVerdict::Infeasible { .. } => None,
        }
    }
}

/// Index layout of the feasibility program: split storage injections
/// `q = qp - qm` so the witness minimizes total absolute reshaping.
struct SftLayout {
    storage_nodes: Vec<usize>,
    horizon: usize,
}

impl SftLayout {
    fn qp(&self, pos: usize, k: usize) -> usize {
        pos * self.horizon + k
    }

    fn qm(&self, pos: usize, k: usize) -> usize {
        self.storage_nodes.len() * self.horizon + pos * self.horizon + k
    }

    fn num_vars(&self) -> usize {
        2 * self.storage_nodes.len() * self.horizon
    }
}

fn check_derating(
    portfolio: &RightsPortfolio,
    net: &InjectionPolytope,
    fleet: &StorageFleet,
) -> Result<(), SftError> {
    let flowgates = portfolio.flowgates();
    for l in 0..flowgates.nrows() {
        for k in 0..flowgates.ncols() {
            if flowgates[(l, k)] > net.capacities[l] {
                return Err(SftError::IllPosedDerating {
                    what: "line capacity",
                    detail: format!(
                        "FGR on directed line {l} nominates {} MW in period {k}, capacity {}",
                        flowgates[(l, k)],
                        net.capacities[l]
                    ),
                });
            }
        }
    }
    let deratings = portfolio.capacity_deratings();
    for i in 0..deratings.nrows() {
        for k in 0..deratings.ncols() {
            if deratings[(i, k)] > fleet.capacity(i) {
                return Err(SftError::IllPosedDerating {
                    what: "storage capacity",
                    detail: format!(
                        "ECR at node {i} nominates {} MWh in period {k}, capacity {}",
                        deratings[(i, k)],
                        fleet.capacity(i)
                    ),
                });
            }
        }
    }
    Ok(())
}

/// Tests simultaneous feasibility of a portfolio, returning a witness
/// (minimal total |Q|) or an infeasibility certificate.
pub fn sft_check(
    portfolio: &RightsPortfolio,
    net: &InjectionPolytope,
    fleet: &StorageFleet,
    tol: f64,
) -> Result<SftVerdict, SftError> {
    let n = net.num_nodes();
    let horizon = portfolio.horizon();
    check_derating(portfolio, net, fleet)?;

    // Fixed data: w(k) = t(k) - s(k), row-capacity deratings.
    let w = portfolio.net_injections() - portfolio.withdrawals();
    let flowgates = portfolio.flowgates();
    let deratings = portfolio.capacity_deratings();
    let h_entries = net.shift_factors.entries();
    let num_flow_rows = net.capacities.len();

    let layout = SftLayout {
        storage_nodes: fleet.storage_nodes(),
        horizon,
    };
    let ns = layout.storage_nodes.len();

    let mut program = ConvexProgram::new(layout.num_vars());
    for var in 0..layout.num_vars() {
        program.set_bounds(var, 0.0, f64::INFINITY).unwrap();
        program.add_linear_cost(var, 1.0).unwrap();
    }

    // Balance rows: sum_i q_i(k) = -1'w(k).
    for k in 0..horizon {
        let mut row = Vec::with_capacity(2 * ns);
        for pos in 0..ns {
            row.push((layout.qp(pos, k), 1.0));
            row.push((layout.qm(pos, k), -1.0));
        }
        let imbalance: f64 = (0..n).map(|i| w[(i, k)]).sum();
        program.add_eq_row(row, -imbalance);
    }

    // Flow rows: H(w + q)(k) <= c - f(k).
    for k in 0..horizon {
        for l in 0..num_flow_rows {
            let mut row = Vec::with_capacity(2 * ns);
            for (pos, &node) in layout.storage_nodes.iter().enumerate() {
                let coeff = h_entries[(l, node)];
                if coeff != 0.0 {
                    row.push((layout.qp(pos, k), coeff));
                    row.push((layout.qm(pos, k), -coeff));
                }
            }
            let hw: f64 = (0..n).map(|i| h_entries[(l, i)] * w[(i, k)]).sum();
            program.add_ineq_row(row, net.capacities[l] - flowgates[(l, k)] - hw);
        }
    }

    // State-of-charge rows on the derated capacity.
    for (pos, &node) in layout.storage_nodes.iter().enumerate() {
        let b = fleet.capacity(node);
        for k in 0..horizon {
            let mut row = Vec::with_capacity(2 * (k + 1));
            for l in 0..=k {
                row.push((layout.qp(pos, l), -1.0));
                row.push((layout.qm(pos, l), 1.0));
            }
            program.add_ineq_row(row.clone(), b - deratings[(node, k)]);
        }
        for k in 0..horizon {
            let mut row = Vec::with_capacity(2 * (k + 1));
            for l in 0..=k {
                row.push((layout.qp(pos, l), 1.0));
                row.push((layout.qm(pos, l), -1.0));
            }
            program.add_ineq_row(row, 0.0);
        }
    }

    // The verdict is a tol-level decision; solving one order tighter
    // keeps the witness clean without demanding more accuracy than the
    // degenerate reshaping programs can reach.
    let result = program.solve((tol * 0.1).clamp(1e-9, 1e-7));
    match result.status {
        SolveStatus::Optimal => {
            let mut witness = DMatrix::zeros(n, horizon);
            for (pos, &node) in layout.storage_nodes.iter().enumerate() {
                for k in 0..horizon {
                    witness[(node, k)] =
                        result.x[layout.qp(pos, k)] - result.x[layout.qm(pos, k)];
                }
            }
            let binding =
                find_binding_constraints(&w, &witness, net, fleet, &flowgates, &deratings, tol);
            Ok(SftVerdict::Feasible {
                witness,
                binding_constraints: binding,
            })
        }
        SolveStatus::Infeasible(cert) => Ok(SftVerdict::Infeasible {
            certificate: describe_certificate(&cert, &layout, num_flow_rows, horizon),
        }),
        _ => Err(SftError::SolverFailure {
            residual: result.kkt_residual,
        }),
    }
}

fn find_binding_constraints(
    w: &DMatrix<f64>,
    witness: &DMatrix<f64>,
    net: &InjectionPolytope,
    fleet: &StorageFleet,
    flowgates: &DMatrix<f64>,
    deratings: &DMatrix<f64>,
    tol: f64,
) -> Vec<BindingConstraint> {
    let horizon = w.ncols();
    let cumulative = CumulativeMatrix::new(horizon);
    let mut binding = Vec::new();
    for k in 0..horizon {
        let x = w.column(k) + witness.column(k);
        let flows = net.shift_factors.flows(&x.into_owned());
        for l in 0..flows.len() {
            if net.capacities[l] - flowgates[(l, k)] - flows[l] <= tol {
                binding.push(BindingConstraint::Flow {
                    period: k,
                    directed_line: l,
                });
            }
        }
    }
    for node in fleet.storage_nodes() {
        let soc = cumulative.apply(&witness.row(node).transpose());
        for k in 0..horizon {
            if fleet.capacity(node) - deratings[(node, k)] - soc[k] <= tol {
                binding.push(BindingConstraint::SocUpper { node, period: k });
            }
            if soc[k] <= tol {
                binding.push(BindingConstraint::SocLower { node, period: k });
            }
        }
    }
    binding
}

fn describe_certificate(
    cert: &FarkasCertificate,
    layout: &SftLayout,
    num_flow_rows: usize,
    horizon: usize,
) -> InfeasibilityCertificate {
    let weight_tol = 1e-9;
    let mut balance = Vec::new();
    for k in 0..horizon {
        if cert.eq_weights[k].abs() > weight_tol {
            balance.push((k, cert.eq_weights[k]));
        }
    }
    let mut flow = Vec::new();
    let mut soc_upper = Vec::new();
    let mut soc_lower = Vec::new();
    for (row, &weight) in cert.ineq_weights.iter().enumerate() {
        if weight <= weight_tol {
            continue;
        }
        if row < horizon * num_flow_rows {
            let period = row / num_flow_rows;
            flow.push((period, row % num_flow_rows, weight));
        } else {
            let offset = row - horizon * num_flow_rows;
            let pos = offset / (2 * horizon);
            let within = offset % (2 * horizon);
            let node = layout.storage_nodes[pos];
            if within < horizon {
                soc_upper.push((node, within, weight));
            } else {
                soc_lower.push((node, within - horizon, weight));
            }
        }
    }
    InfeasibilityCertificate {
        balance_weights: balance,
        flow_weights: flow,
        soc_upper_weights: soc_upper,
        soc_lower_weights: soc_lower,
        gap: cert.gap,
    }
}

/// Outcome of a rent-maximization run.
#[derive(Debug, Clone)]
pub struct MaxRentResult {
    pub portfolio: RightsPortfolio,
    /// Optimal rent of the linear program.
    pub rent: f64,
    /// The surplus it should match (TCS or MS).
    pub target: f64,
    pub gap: f64,
    /// Witness proving the returned portfolio simultaneously feasible.
    pub witness: DMatrix<f64>,
}

/// Builds the dispatch-equivalent portfolio: FTRs carrying the net
/// power `v + u`, plus (in combined mode) FSRs mirroring the storage
/// schedule. Its rent equals the TCS or the MS by construction.
fn closed_form_portfolio(
    sol: &EquilibriumSolution,
    num_directed_lines: usize,
    transmission_only: bool,
) -> (RightsPortfolio, DMatrix<f64>) {
    let net = sol.net_power();
    let n = net.nrows();
    let horizon = net.ncols();
    let mut portfolio = RightsPortfolio::empty(n, num_directed_lines, horizon);
    for right in decompose_into_ftrs(&net) {
        portfolio.add(Right::Ftr(right)).expect("hub FTRs are valid");
    }
    if transmission_only {
        // Witness: leave storage idle.
        (portfolio, DMatrix::zeros(n, horizon))
    } else {
        for i in 0..n {
            let profile = sol.extractions.row(i).transpose();
            if profile.amax() > 0.0 {
                portfolio
                    .add(Right::Fsr(Fsr::new(i, profile)))
                    .expect("FSR profiles are unrestricted");
            }
        }
        // Witness: run storage exactly as the dispatch did.
        (portfolio, sol.extractions.clone())
    }
}

/// Routes a balanced injection matrix through node 0 as point-to-point
/// rights with nonnegative per-period profiles.
fn decompose_into_ftrs(net: &DMatrix<f64>) -> Vec<Ftr> {
    let n = net.nrows();
    let horizon = net.ncols();
    let hub = 0;
    let mut to_hub = vec![DVector::zeros(horizon); n];
    let mut from_hub = vec![DVector::zeros(horizon); n];
    for i in 0..n {
        if i == hub {
            continue;
        }
        for k in 0..horizon {
            if net[(i, k)] > 0.0 {
                to_hub[i][k] = net[(i, k)];
            } else {
                from_hub[i][k] = -net[(i, k)];
            }
        }
    }
    let mut rights = Vec::new();
    for i in 0..n {
        if i == hub {
            continue;
        }
        if to_hub[i].amax() > 0.0 {
            rights.push(Ftr::new(i, hub, to_hub[i].clone()).expect("valid hub FTR"));
        }
        if from_hub[i].amax() > 0.0 {
            rights.push(Ftr::new(hub, i, from_hub[i].clone()).expect("valid hub FTR"));
        }
    }
    rights
}

/// Maximizes the rent over all simultaneously feasible portfolios at
/// the fixed equilibrium prices. In transmission-only mode the optimum
/// equals the transmission congestion surplus; in combined mode it
/// equals the full merchandising surplus.
pub fn max_rent(
    sol: &EquilibriumSolution,
    net: &InjectionPolytope,
    fleet: &StorageFleet,
    report: &SettlementReport,
    transmission_only: bool,
) -> Result<MaxRentResult, SftError> {
    let n = net.num_nodes();
    let horizon = sol.injections.ncols();
    let num_flow_rows = net.capacities.len();
    let storage_nodes = fleet.storage_nodes();
    let ns = storage_nodes.len();

    let target = if transmission_only {
        report.transmission_surplus
    } else {
        report.merchandising_surplus
    };

    // Variable layout: w (n x N) | f (2m x N) | q (ns x N) | e (ns x N).
    let w_var = |i: usize, k: usize| k * n + i;
    let f_var = |l: usize, k: usize| n * horizon + k * num_flow_rows + l;
    let q_var = |pos: usize, k: usize| (n + num_flow_rows) * horizon + pos * horizon + k;
    let e_var =
        |pos: usize, k: usize| (n + num_flow_rows) * horizon + ns * horizon + pos * horizon + k;
    let combined = !transmission_only;
    let num_vars = (n + num_flow_rows) * horizon + ns * horizon * if combined { 2 } else { 1 };

    let mut program = ConvexProgram::new(num_vars);

    // Maximize rent = -sum_k lambda(k)'w(k) + sum mu'f (+ sum nu_up'e),
    // i.e. minimize its negation.
    for k in 0..horizon {
        for i in 0..n {
            program.add_linear_cost(w_var(i, k), sol.prices[(i, k)]).unwrap();
        }
        for l in 0..num_flow_rows {
            program
                .add_linear_cost(f_var(l, k), -sol.line_prices[(l, k)])
                .unwrap();
            program.set_bounds(f_var(l, k), 0.0, net.capacities[l]).unwrap();
        }
    }
    if combined {
        for (pos, &node) in storage_nodes.iter().enumerate() {
            for k in 0..horizon {
                program
                    .add_linear_cost(e_var(pos, k), -sol.soc_upper_prices[(node, k)])
                    .unwrap();
                program
                    .set_bounds(e_var(pos, k), 0.0, fleet.capacity(node))
                    .unwrap();
            }
        }
    }

    // Membership balance: 1'(w + q)(k) = 0.
    for k in 0..horizon {
        let mut row: Vec<(usize, f64)> = (0..n).map(|i| (w_var(i, k), 1.0)).collect();
        for pos in 0..ns {
            row.push((q_var(pos, k), 1.0));
        }
        program.add_eq_row(row, 0.0);
    }
    // Transmission-only: w carries FTR net injections alone, which
    // are balanced by construction.
    if transmission_only {
        for k in 0..horizon {
            let row: Vec<(usize, f64)> = (0..n).map(|i| (w_var(i, k), 1.0)).collect();
            program.add_eq_row(row, 0.0);
        }
    }

    // Flow rows: H(w + q)(k) + f(k) <= c.
    let h_entries = net.shift_factors.entries();
    for k in 0..horizon {
        for l in 0..num_flow_rows {
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(n + ns + 1);
            for i in 0..n {
                let coeff = h_entries[(l, i)];
                if coeff != 0.0 {
                    row.push((w_var(i, k), coeff));
                }
            }
            for (pos, &node) in storage_nodes.iter().enumerate() {
                let coeff = h_entries[(l, node)];
                if coeff != 0.0 {
                    row.push((q_var(pos, k), coeff));
                }
            }
            row.push((f_var(l, k), 1.0));
            program.add_ineq_row(row, net.capacities[l]);
        }
    }

    // Storage rows: 0 <= (L q_i)_k <= b_i - e_i(k).
    for (pos, &node) in storage_nodes.iter().enumerate() {
        let b = fleet.capacity(node);
        for k in 0..horizon {
            let mut row: Vec<(usize, f64)> = (0..=k).map(|l| (q_var(pos, l), -1.0)).collect();
            if combined {
                row.push((e_var(pos, k), 1.0));
            }
            program.add_ineq_row(row, b);
        }
        for k in 0..horizon {
            let row: Vec<(usize, f64)> = (0..=k).map(|l| (q_var(pos, l), 1.0)).collect();
            program.add_ineq_row(row, 0.0);
        }
    }

    let result = program.solve(1e-8);
    if !result.status.is_optimal() {
        return Err(SftError::SolverFailure {
            residual: result.kkt_residual,
        });
    }
    let rent_lp = -result.objective;
    let gap = rent_lp - target;

    // The dispatch-equivalent construction achieves the bound; return
    // it whenever the LP confirms (it is the canonical optimum), else
    // fall back to the solver's portfolio.
    let (closed_portfolio, closed_witness) =
        closed_form_portfolio(sol, num_flow_rows, transmission_only);
    let closed_rent = crate::rights::rent(&closed_portfolio, sol).total();
    if (closed_rent - rent_lp).abs() <= 1e-6 * rent_lp.abs().max(1.0) {
        return Ok(MaxRentResult {
            portfolio: closed_portfolio,
            rent: rent_lp,
            target,
            gap,
            witness: closed_witness,
        });
    }

    // Reconstruct a portfolio from the LP solution: split w into a
    // balanced FTR part and a uniform FSR shift per period.
    let mut portfolio = RightsPortfolio::empty(n, num_flow_rows, horizon);
    let mut t = DMatrix::zeros(n, horizon);
    let mut shift = DVector::zeros(horizon);
    for k in 0..horizon {
        let total: f64 = (0..n).map(|i| result.x[w_var(i, k)]).sum();
        shift[k] = total / n as f64;
        for i in 0..n {
            t[(i, k)] = result.x[w_var(i, k)] - shift[k];
        }
    }
    for right in decompose_into_ftrs(&t) {
        portfolio.add(Right::Ftr(right))?;
    }
    if shift.amax() > 1e-12 {
        for i in 0..n {
            portfolio.add(Right::Fsr(Fsr::new(i, -shift.clone())))?;
        }
    }
    for k in 0..horizon {
        for l in 0..num_flow_rows {
            let f = result.x[f_var(l, k)];
            if f > 1e-9 {
                let mut profile = DVector::zeros(horizon);
                profile[k] = f;
                portfolio.add(Right::Fgr(crate::rights::Fgr::new(l, profile)?))?;
            }
        }
    }
    if combined {
        for (pos, &node) in storage_nodes.iter().enumerate() {
            for k in 0..horizon {
                let e = result.x[e_var(pos, k)];
                if e > 1e-9 {
                    let mut profile = DVector::zeros(horizon);
                    profile[k] = e;
                    portfolio.add(Right::Ecr(crate::rights::Ecr::new(node, profile)?))?;
                }
            }
        }
        // FSR part of w: none beyond the uniform shift (w absorbed it).
    }
    let mut witness = DMatrix::zeros(n, horizon);
    for (pos, &node) in storage_nodes.iter().enumerate() {
        for k in 0..horizon {
            witness[(node, k)] = result.x[q_var(pos, k)];
        }
    }
    Ok(MaxRentResult {
        portfolio,
        rent: rent_lp,
        target,
        gap,
        witness,
    })
}

/// Result of auditing a portfolio against a settled market.
#[derive(Debug, Clone)]
pub struct AuditRecord {
    pub rents: RentStatement,
    pub merchandising_surplus: f64,
    /// Surplus the operator keeps after funding every right.
    pub retained: f64,
    pub adequate: bool,
}

/// Verifies simultaneous feasibility, settles the portfolio, and
/// checks that the merchandising surplus covers the total rent.
pub fn revenue_adequacy_audit(
    portfolio: &RightsPortfolio,
    sol: &EquilibriumSolution,
    report: &SettlementReport,
    net: &InjectionPolytope,
    fleet: &StorageFleet,
    tol: f64,
) -> Result<AuditRecord, SftError> {
    let verdict = sft_check(portfolio, net, fleet, tol)?;
    if !verdict.is_feasible() {
        return Err(SftError::NotSimultaneouslyFeasible);
    }
    let rents = crate::rights::rent(portfolio, sol);
    let ms = report.merchandising_surplus;
    let retained = ms - rents.total();
    let adequate = retained >= -tol * ms.abs().max(1.0);
    Ok(AuditRecord {
        rents,
        merchandising_surplus: ms,
        retained,
        adequate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::solve_dispatch;
    use crate::fixtures;
    use crate::rights::aggregate;
    use crate::settlement::settle;
    use approx::assert_abs_diff_eq;

    fn dvec(vals: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(vals)
    }

    #[test]
    fn empty_portfolio_is_feasible_with_zero_witness() {
        let scenario = fixtures::instance_b();
        let portfolio = RightsPortfolio::empty(2, 2, 1);
        let verdict = sft_check(
            &portfolio,
            scenario.polytope(),
            scenario.storage(),
            1e-6,
        )
        .unwrap();
        match verdict {
            SftVerdict::Feasible { witness, .. } => {
                assert_abs_diff_eq!(witness.amax(), 0.0, epsilon = 1e-9);
            }
            SftVerdict::Infeasible { .. } => panic!("empty portfolio must be feasible"),
        }
    }

    #[test]
    fn ftr_at_capacity_is_feasible_beyond_it_is_not() {
        let scenario = fixtures::instance_b();
        let at_cap = aggregate(
            vec![Right::Ftr(Ftr::new(0, 1, dvec(&[3.0])).unwrap())],
            2,
            2,
            1,
        )
        .unwrap();
        let verdict = sft_check(&at_cap, scenario.polytope(), scenario.storage(), 1e-6).unwrap();
        assert!(verdict.is_feasible());

        let over = aggregate(
            vec![Right::Ftr(Ftr::new(0, 1, dvec(&[4.0])).unwrap())],
            2,
            2,
            1,
        )
        .unwrap();
        let verdict = sft_check(&over, scenario.polytope(), scenario.storage(), 1e-6).unwrap();
        match verdict {
            SftVerdict::Infeasible { certificate } => {
                assert!(certificate.gap < 0.0);
                assert!(!certificate.flow_weights.is_empty());
            }
            SftVerdict::Feasible { .. } => panic!("4 MW through a 3 MW line"),
        }
    }

    #[test]
    fn fsr_within_device_capacity_is_feasible() {
        let scenario = fixtures::instance_c();
        let ok = aggregate(vec![Right::Fsr(Fsr::new(1, dvec(&[-1.0, 1.0])))], 2, 2, 2).unwrap();
        let verdict = sft_check(&ok, scenario.polytope(), scenario.storage(), 1e-6).unwrap();
        match &verdict {
            SftVerdict::Feasible { witness, .. } => {
                // Balance forces q2 = s2 exactly on this network.
                assert_abs_diff_eq!(witness[(1, 0)], -1.0, epsilon = 1e-6);
                assert_abs_diff_eq!(witness[(1, 1)], 1.0, epsilon = 1e-6);
            }
            SftVerdict::Infeasible { .. } => panic!("1 MWh swing fits the 1 MWh device"),
        }

        let over = aggregate(vec![Right::Fsr(Fsr::new(1, dvec(&[-2.0, 2.0])))], 2, 2, 2).unwrap();
        let verdict = sft_check(&over, scenario.polytope(), scenario.storage(), 1e-6).unwrap();
        assert!(!verdict.is_feasible());
    }

    #[test]
    fn witness_revalidates_against_network_and_storage() {
        let scenario = fixtures::instance_c();
        let p = aggregate(vec![Right::Fsr(Fsr::new(1, dvec(&[-0.5, 0.5])))], 2, 2, 2).unwrap();
        let verdict = sft_check(&p, scenario.polytope(), scenario.storage(), 1e-6).unwrap();
        let witness = verdict.witness().expect("feasible");
        let w = p.net_injections() - p.withdrawals();
        for k in 0..2 {
            let x = (w.column(k) + witness.column(k)).into_owned();
            assert!(crate::network::check_injection_feasible(
                &x,
                scenario.polytope(),
                1e-6
            )
            .is_feasible());
        }
        for i in 0..2 {
            assert!(crate::storage::check_storage_feasible(
                &witness.row(i).transpose(),
                scenario.storage().capacity(i),
                1e-6
            )
            .is_feasible());
        }
    }

    #[test]
    fn overnominated_ecr_is_ill_posed() {
        let scenario = fixtures::instance_c();
        let p = aggregate(
            vec![Right::Ecr(crate::rights::Ecr::new(1, dvec(&[2.0, 0.0])).unwrap())],
            2,
            2,
            2,
        )
        .unwrap();
        let err = sft_check(&p, scenario.polytope(), scenario.storage(), 1e-6).unwrap_err();
        assert!(matches!(err, SftError::IllPosedDerating { .. }));
    }

    #[test]
    fn max_rent_transmission_only_recovers_tcs_on_instance_b() {
        let scenario = fixtures::instance_b();
        let sol = solve_dispatch(&scenario).unwrap();
        let report = settle(&scenario, &sol).unwrap();
        let result = max_rent(
            &sol,
            scenario.polytope(),
            scenario.storage(),
            &report,
            true,
        )
        .unwrap();
        assert_abs_diff_eq!(result.rent, 12.0, epsilon = 1e-4);
        assert_abs_diff_eq!(result.gap, 0.0, epsilon = 1e-4);
        // The optimal portfolio carries the dispatch flow as an FTR.
        assert_abs_diff_eq!(result.portfolio.ftr[&(0, 1)][0], 3.0, epsilon = 1e-5);
    }

    #[test]
    fn max_rent_combined_recovers_ms_on_instance_c() {
        let scenario = fixtures::instance_c();
        let sol = solve_dispatch(&scenario).unwrap();
        let report = settle(&scenario, &sol).unwrap();
        let result = max_rent(
            &sol,
            scenario.polytope(),
            scenario.storage(),
            &report,
            false,
        )
        .unwrap();
        assert_abs_diff_eq!(result.rent, 8.0, epsilon = 1e-4);
        assert_abs_diff_eq!(result.gap, 0.0, epsilon = 1e-4);
        // Round trip: the returned portfolio passes its own test.
        let verdict = sft_check(
            &result.portfolio,
            scenario.polytope(),
            scenario.storage(),
            1e-6,
        )
        .unwrap();
        assert!(verdict.is_feasible());
    }

    #[test]
    fn max_rent_is_zero_without_congestion() {
        let scenario = fixtures::instance_a();
        let sol = solve_dispatch(&scenario).unwrap();
        let report = settle(&scenario, &sol).unwrap();
        for mode in [true, false] {
            let result = max_rent(
                &sol,
                scenario.polytope(),
                scenario.storage(),
                &report,
                mode,
            )
            .unwrap();
            assert_abs_diff_eq!(result.rent, 0.0, epsilon = 1e-5);
        }
    }

    #[test]
    fn audit_passes_exhaustive_fsr_and_retains_nothing() {
        let scenario = fixtures::instance_c();
        let sol = solve_dispatch(&scenario).unwrap();
        let report = settle(&scenario, &sol).unwrap();
        let p = aggregate(vec![Right::Fsr(Fsr::new(1, dvec(&[-1.0, 1.0])))], 2, 2, 2).unwrap();
        let audit = revenue_adequacy_audit(
            &p,
            &sol,
            &report,
            scenario.polytope(),
            scenario.storage(),
            1e-6,
        )
        .unwrap();
        assert!(audit.adequate);
        assert_abs_diff_eq!(audit.rents.total(), 8.0, epsilon = 1e-5);
        assert_abs_diff_eq!(audit.retained, 0.0, epsilon = 1e-5);
    }

    #[test]
    fn audit_passes_partial_ftr_and_retains_the_rest() {
        let scenario = fixtures::instance_b();
        let sol = solve_dispatch(&scenario).unwrap();
        let report = settle(&scenario, &sol).unwrap();
        let p = aggregate(
            vec![Right::Ftr(Ftr::new(0, 1, dvec(&[2.0])).unwrap())],
            2,
            2,
            1,
        )
        .unwrap();
        let audit = revenue_adequacy_audit(
            &p,
            &sol,
            &report,
            scenario.polytope(),
            scenario.storage(),
            1e-6,
        )
        .unwrap();
        assert!(audit.adequate);
        assert_abs_diff_eq!(audit.rents.total(), 8.0, epsilon = 1e-5);
        assert_abs_diff_eq!(audit.retained, 4.0, epsilon = 1e-5);
    }

    #[test]
    fn audit_refuses_infeasible_portfolio() {
        let scenario = fixtures::instance_b();
        let sol = solve_dispatch(&scenario).unwrap();
        let report = settle(&scenario, &sol).unwrap();
        let p = aggregate(
            vec![Right::Ftr(Ftr::new(0, 1, dvec(&[4.0])).unwrap())],
            2,
            2,
            1,
        )
        .unwrap();
        let err = revenue_adequacy_audit(
            &p,
            &sol,
            &report,
            scenario.polytope(),
            scenario.storage(),
            1e-6,
        )
        .unwrap_err();
        assert!(matches!(err, SftError::NotSimultaneouslyFeasible));
    }

    #[test]
    fn scaling_preserves_feasibility() {
        let scenario = fixtures::instance_c();
        let p = aggregate(
            vec![
                Right::Fsr(Fsr::new(1, dvec(&[-1.0, 1.0]))),
                Right::Ftr(Ftr::new(0, 1, dvec(&[5.0, 5.0])).unwrap()),
            ],
            2,
            2,
            2,
        )
        .unwrap();
        for alpha in [1.0, 0.6, 0.25, 0.0] {
            let scaled = p.scale(alpha);
            let verdict =
                sft_check(&scaled, scenario.polytope(), scenario.storage(), 1e-6).unwrap();
            assert!(verdict.is_feasible(), "alpha = {alpha}");
        }
    }
}
