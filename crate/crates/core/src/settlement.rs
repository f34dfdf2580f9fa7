//! Merchandising-surplus settlement: what the market operator collects
//! clearing the spot market and how it splits into transmission and
//! storage congestion surpluses.
//!
//! The surplus is computed two independent ways per component — the
//! flow/price (primal) form and the shadow-price (dual) form — and the
//! agreement residuals ship with the report. A residual beyond the
//! identity tolerance means the duals and the dispatch disagree, which
//! points at a solver or extraction bug rather than a market outcome.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dispatch::EquilibriumSolution;
use crate::network::{Line, ShiftFactorMatrix};

/// Tolerance on the settlement identities, relative to max(1, |MS|).
pub const IDENTITY_TOLERANCE: f64 = 1e-4;

/// Per-period node-to-node flows; `flows[k][(i, j)]` is the power
/// moving from node `i` to node `j` during period `k`, antisymmetric
/// and zero where no line exists. Parallel lines are summed.
#[derive(Debug, Clone)]
pub struct FlowDecomposition {
    flows: Vec<DMatrix<f64>>,
}

impl FlowDecomposition {
    pub fn horizon(&self) -> usize {
        self.flows.len()
    }

    pub fn period(&self, k: usize) -> &DMatrix<f64> {
        &self.flows[k]
    }
}

/// `MS = -trace(Lambda' V)`: net payments into the operator.
pub fn merchandising_surplus(prices: &DMatrix<f64>, injections: &DMatrix<f64>) -> f64 {
    -prices.component_mul(injections).sum()
}

/// Maps the directed line flows of a solved dispatch onto node pairs.
pub fn flow_decomposition(
    sol: &EquilibriumSolution,
    shift_factors: &ShiftFactorMatrix,
    lines: &[Line],
) -> FlowDecomposition {
    let n = shift_factors.num_nodes();
    let net = sol.net_power();
    let mut flows = Vec::with_capacity(net.ncols());
    for k in 0..net.ncols() {
        let x = net.column(k).into_owned();
        let line_flows = shift_factors.forward_flows(&x);
        let mut p = DMatrix::<f64>::zeros(n, n);
        for (l, line) in lines.iter().enumerate() {
            p[(line.from_node, line.to_node)] += line_flows[l];
            p[(line.to_node, line.from_node)] -= line_flows[l];
        }
        flows.push(p);
    }
    FlowDecomposition { flows }
}

/// Settlement of one solved scenario.
#[derive(Debug, Clone)]
pub struct SettlementReport {
    pub merchandising_surplus: f64,
    /// Transmission congestion surplus, pairwise flow form.
    pub transmission_surplus: f64,
    /// Storage congestion surplus, price-times-extraction form.
    pub storage_surplus: f64,
    /// Dual form: total line shadow rent `sum_k mu(k)' c`.
    pub transmission_surplus_dual: f64,
    /// Dual form: total device shadow rent `sum_i nu_up_i' b_i`.
    pub storage_surplus_dual: f64,
    /// Cross-check form `-sum_k lambda(k)'(v(k) + u(k))`.
    pub transmission_surplus_net_form: f64,
    /// `lambda_i(k) * v_i(k)` per node and period.
    pub per_node_payments: DMatrix<f64>,
    pub identity_residuals: IdentityResiduals,
}

/// Absolute residuals of the settlement identities.
#[derive(Debug, Clone, Copy)]
pub struct IdentityResiduals {
    /// `|MS - (TCS + SCS)|`.
    pub decomposition: f64,
    /// `|TCS_flow - TCS_dual|`.
    pub transmission_dual: f64,
    /// `|SCS - SCS_dual|`.
    pub storage_dual: f64,
    /// `|TCS_flow - TCS_net|`.
    pub transmission_net: f64,
}

impl IdentityResiduals {
    pub fn max(&self) -> f64 {
        self.decomposition
            .max(self.transmission_dual)
            .max(self.storage_dual)
            .max(self.transmission_net)
    }
}

#[derive(Debug, Error)]
pub enum SettlementError {
    #[error(
        "settlement identity violated: residual {residual:.3e} exceeds {tolerance:.1e} \
         (solver or dual-extraction bug)"
    )]
    IdentityViolation { residual: f64, tolerance: f64 },
}

/// Computes the full settlement report from a solved equilibrium, its
/// flow decomposition, and the capacity data.
pub fn congestion_surpluses(
    sol: &EquilibriumSolution,
    flows: &FlowDecomposition,
    line_capacities: &DVector<f64>,
    storage_capacities: &DVector<f64>,
) -> Result<SettlementReport, SettlementError> {
    let n = sol.injections.nrows();
    let horizon = sol.injections.ncols();

    let ms = merchandising_surplus(&sol.prices, &sol.injections);

    // Pairwise flow form of the transmission surplus.
    let mut tcs_flow = 0.0;
    for k in 0..horizon {
        let p = flows.period(k);
        for i in 0..n {
            for j in 0..n {
                tcs_flow += 0.5 * (sol.prices[(j, k)] - sol.prices[(i, k)]) * p[(i, j)];
            }
        }
    }

    // Net-injection cross-check of the same quantity.
    let net = sol.net_power();
    let tcs_net = -sol.prices.component_mul(&net).sum();

    let scs = sol.prices.component_mul(&sol.extractions).sum();

    let mut tcs_dual = 0.0;
    for k in 0..horizon {
        tcs_dual += sol.line_prices.column(k).dot(line_capacities);
    }
    let mut scs_dual = 0.0;
    for i in 0..n {
        scs_dual += sol.soc_upper_prices.row(i).sum() * storage_capacities[i];
    }

    let per_node_payments = sol.prices.component_mul(&sol.injections);

    let identity_residuals = IdentityResiduals {
        decomposition: (ms - (tcs_flow + scs)).abs(),
        transmission_dual: (tcs_flow - tcs_dual).abs(),
        storage_dual: (scs - scs_dual).abs(),
        transmission_net: (tcs_flow - tcs_net).abs(),
    };
    let tolerance = IDENTITY_TOLERANCE * ms.abs().max(1.0);
    if identity_residuals.max() > tolerance {
        return Err(SettlementError::IdentityViolation {
            residual: identity_residuals.max(),
            tolerance,
        });
    }

    Ok(SettlementReport {
        merchandising_surplus: ms,
        transmission_surplus: tcs_flow,
        storage_surplus: scs,
        transmission_surplus_dual: tcs_dual,
        storage_surplus_dual: scs_dual,
        transmission_surplus_net_form: tcs_net,
        per_node_payments,
        identity_residuals,
    })
}

/// Convenience wrapper: decomposes flows and settles in one call.
pub fn settle(
    scenario: &crate::dispatch::ScenarioSpec,
    sol: &EquilibriumSolution,
) -> Result<SettlementReport, SettlementError> {
    let flows = flow_decomposition(sol, scenario.shift_factors(), scenario.lines());
    congestion_surpluses(
        sol,
        &flows,
        &scenario.polytope().capacities,
        scenario.storage().capacities(),
    )
}
