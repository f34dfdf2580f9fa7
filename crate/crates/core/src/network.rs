//! DC transmission network model: lines, shift factors, and the
//! feasible-injection polytope.
//!
//! Line flows are linear in the balanced nodal injections through the
//! shift-factor matrix `H` (2m x n). Rows `0..m` carry the forward
//! orientation of each line (from -> to), rows `m..2m` the exact
//! negations. `H` is normalized so that `H * 1 = 0`: shifting every
//! nodal injection equally changes no flow.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// A transmission line between two nodes.
///
/// Capacity applies to the forward orientation; `capacity_reverse`
/// overrides the reverse orientation when the scenario wants an
/// asymmetric rating (defaults to the forward value).
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from_node: usize,
    pub to_node: usize,
    pub reactance: f64,
    pub capacity: f64,
    pub capacity_reverse: Option<f64>,
}

impl Line {
    pub fn new(from_node: usize, to_node: usize, reactance: f64, capacity: f64) -> Self {
        Self {
            from_node,
            to_node,
            reactance,
            capacity,
            capacity_reverse: None,
        }
    }

    pub fn reverse_capacity(&self) -> f64 {
        self.capacity_reverse.unwrap_or(self.capacity)
    }
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("line graph is not connected: node {0} is unreachable from node 0")]
    DisconnectedGraph(usize),
    #[error("line {index} has non-positive reactance {reactance}")]
    InvalidReactance { index: usize, reactance: f64 },
    #[error("line {index} references node {node} but the network has {n} nodes")]
    InvalidNode { index: usize, node: usize, n: usize },
    #[error("line {index} connects node {node} to itself")]
    SelfLoop { index: usize, node: usize },
    #[error("line {index} has negative capacity {capacity}")]
    NegativeCapacity { index: usize, capacity: f64 },
    #[error("reference bus {0} is out of range for {1} nodes")]
    InvalidReferenceBus(usize, usize),
}

/// Shift-factor (PTDF) matrix mapping balanced nodal injections to
/// directed line flows.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftFactorMatrix {
    /// 2m x n matrix; row `m + l` is the entrywise negation of row `l`.
    entries: DMatrix<f64>,
    num_lines: usize,
}

impl ShiftFactorMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Number of physical lines `m` (half the row count).
    pub fn num_lines(&self) -> usize {
        self.num_lines
    }

    pub fn num_nodes(&self) -> usize {
        self.entries.ncols()
    }

    /// Directed flows (length 2m) induced by the injection vector `v`.
    pub fn flows(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.entries * v
    }

    /// Forward-orientation flows only (length m).
    pub fn forward_flows(&self, v: &DVector<f64>) -> DVector<f64> {
        self.entries.rows(0, self.num_lines) * v
    }
}

/// Feasible-injection polytope `{ v : Hv <= c, 1'v = 0 }`.
#[derive(Debug, Clone)]
pub struct InjectionPolytope {
    pub shift_factors: ShiftFactorMatrix,
    /// Directed capacities, length 2m: forward block then reverse block.
    pub capacities: DVector<f64>,
}

impl InjectionPolytope {
    pub fn num_nodes(&self) -> usize {
        self.shift_factors.num_nodes()
    }

    pub fn num_lines(&self) -> usize {
        self.shift_factors.num_lines()
    }
}

/// One violated constraint of an injection-feasibility check.
#[derive(Debug, Clone, PartialEq)]
pub enum InjectionViolation {
    /// `|1'v|` exceeded the tolerance.
    Balance { imbalance: f64 },
    /// Flow on directed row `row` exceeded its capacity by `excess` MW.
    FlowLimit { row: usize, excess: f64 },
}

/// Verdict of a feasibility check; infeasibility is a value, not an error.
#[derive(Debug, Clone, PartialEq)]
pub enum FeasibilityVerdict {
    Feasible,
    Infeasible(Vec<InjectionViolation>),
}

impl FeasibilityVerdict {
    pub fn is_feasible(&self) -> bool {
        matches!(self, FeasibilityVerdict::Feasible)
    }
}

fn validate_lines(lines: &[Line], n: usize) -> Result<(), NetworkError> {
    for (index, line) in lines.iter().enumerate() {
        if line.from_node >= n {
            return Err(NetworkError::InvalidNode {
                index,
                node: line.from_node,
                n,
            });
        }
        if line.to_node >= n {
            return Err(NetworkError::InvalidNode {
                index,
                node: line.to_node,
                n,
            });
        }
        if line.from_node == line.to_node {
            return Err(NetworkError::SelfLoop {
                index,
                node: line.from_node,
            });
        }
        if !(line.reactance > 0.0) {
            return Err(NetworkError::InvalidReactance {
                index,
                reactance: line.reactance,
            });
        }
        if line.capacity < 0.0 {
            return Err(NetworkError::NegativeCapacity {
                index,
                capacity: line.capacity,
            });
        }
        if let Some(rev) = line.capacity_reverse {
            if rev < 0.0 {
                return Err(NetworkError::NegativeCapacity {
                    index,
                    capacity: rev,
                });
            }
        }
    }
    Ok(())
}

fn check_connected(lines: &[Line], n: usize) -> Result<(), NetworkError> {
    let mut adj = vec![Vec::new(); n];
    for line in lines {
        adj[line.from_node].push(line.to_node);
        adj[line.to_node].push(line.from_node);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(i) => Err(NetworkError::DisconnectedGraph(i)),
        None => Ok(()),
    }
}

/// Builds the shift-factor matrix of a connected DC network.
///
/// The reduced nodal susceptance matrix (reference row/column deleted)
/// is factored once and applied to each line's incidence to obtain raw
/// PTDFs, which are then shifted rowwise to zero mean. Flows `H * v`
/// on balanced `v` are invariant to the reference bus choice.
pub fn build_shift_factors(
    lines: &[Line],
    n: usize,
    reference_bus: usize,
) -> Result<ShiftFactorMatrix, NetworkError> {
    if reference_bus >= n {
        return Err(NetworkError::InvalidReferenceBus(reference_bus, n));
    }
    validate_lines(lines, n)?;
    check_connected(lines, n)?;

    let m = lines.len();

    // Nodal susceptance (weighted Laplacian) matrix.
    let mut laplacian = DMatrix::<f64>::zeros(n, n);
    for line in lines {
        let y = 1.0 / line.reactance;
        let (a, b) = (line.from_node, line.to_node);
        laplacian[(a, a)] += y;
        laplacian[(b, b)] += y;
        laplacian[(a, b)] -= y;
        laplacian[(b, a)] -= y;
    }

    // Reduced system: delete the reference row/column and invert.
    let keep: Vec<usize> = (0..n).filter(|&i| i != reference_bus).collect();
    let mut reduced = DMatrix::<f64>::zeros(n - 1, n - 1);
    for (ri, &i) in keep.iter().enumerate() {
        for (rj, &j) in keep.iter().enumerate() {
            reduced[(ri, rj)] = laplacian[(i, j)];
        }
    }
    let lu = reduced.lu();
    let inv = lu
        .try_inverse()
        .expect("reduced susceptance matrix of a connected graph is nonsingular");

    // Re-embed: angle sensitivity of node i to an injection at node j.
    let mut sensitivity = DMatrix::<f64>::zeros(n, n);
    for (ri, &i) in keep.iter().enumerate() {
        for (rj, &j) in keep.iter().enumerate() {
            sensitivity[(i, j)] = inv[(ri, rj)];
        }
    }

    let mut entries = DMatrix::<f64>::zeros(2 * m, n);
    for (l, line) in lines.iter().enumerate() {
        let y = 1.0 / line.reactance;
        for j in 0..n {
            let raw = y * (sensitivity[(line.from_node, j)] - sensitivity[(line.to_node, j)]);
            entries[(l, j)] = raw;
        }
        // Shift to zero row mean so H*1 = 0; the action on balanced
        // injections is unchanged.
        let mean = entries.row(l).sum() / n as f64;
        for j in 0..n {
            entries[(l, j)] -= mean;
            entries[(m + l, j)] = -entries[(l, j)];
        }
    }

    Ok(ShiftFactorMatrix {
        entries,
        num_lines: m,
    })
}

/// Assembles the directed capacity vector (length 2m) of a line set.
pub fn capacity_vector(lines: &[Line]) -> DVector<f64> {
    let m = lines.len();
    let mut c = DVector::zeros(2 * m);
    for (l, line) in lines.iter().enumerate() {
        c[l] = line.capacity;
        c[m + l] = line.reverse_capacity();
    }
    c
}

/// Builds the full feasible-injection polytope for a line set.
pub fn build_polytope(
    lines: &[Line],
    n: usize,
    reference_bus: usize,
) -> Result<InjectionPolytope, NetworkError> {
    Ok(InjectionPolytope {
        shift_factors: build_shift_factors(lines, n, reference_bus)?,
        capacities: capacity_vector(lines),
    })
}

/// Checks `v` against the polytope: balance within `tol` and every
/// directed flow within its capacity plus `tol`.
pub fn check_injection_feasible(
    v: &DVector<f64>,
    poly: &InjectionPolytope,
    tol: f64,
) -> FeasibilityVerdict {
    let mut violations = Vec::new();
    let imbalance = v.sum();
    if imbalance.abs() > tol {
        violations.push(InjectionViolation::Balance { imbalance });
    }
    let flows = poly.shift_factors.flows(v);
    for row in 0..flows.len() {
        let excess = flows[row] - poly.capacities[row];
        if excess > tol {
            violations.push(InjectionViolation::FlowLimit { row, excess });
        }
    }
    if violations.is_empty() {
        FeasibilityVerdict::Feasible
    } else {
        FeasibilityVerdict::Infeasible(violations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dvec(vals: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(vals)
    }

    #[test]
    fn single_line_flow_equals_sending_injection() {
        let lines = vec![Line::new(0, 1, 0.1, 100.0)];
        let h = build_shift_factors(&lines, 2, 0).unwrap();
        let v = dvec(&[5.0, -5.0]);
        let flows = h.flows(&v);
        assert_abs_diff_eq!(flows[0], 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(flows[1], -5.0, epsilon = 1e-12);
        // H*1 = 0
        let ones = dvec(&[1.0, 1.0]);
        assert_abs_diff_eq!(h.flows(&ones).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn three_node_ring_splits_flow_by_path_susceptance() {
        // Triangle with equal reactances; injection 1 MW at node 0
        // withdrawn at node 1. Direct path carries 2/3, the two-hop
        // path 1/3. Values cross-checked against the Laplacian
        // pseudo-inverse oracle in tests/oracles.
        let lines = vec![
            Line::new(0, 1, 1.0, 10.0),
            Line::new(0, 2, 1.0, 10.0),
            Line::new(2, 1, 1.0, 10.0),
        ];
        let h = build_shift_factors(&lines, 3, 0).unwrap();
        let v = dvec(&[1.0, -1.0, 0.0]);
        let flows = h.flows(&v);
        assert_abs_diff_eq!(flows[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(flows[1], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(flows[2], 1.0 / 3.0, epsilon = 1e-12);
        // The reversed orientation of the third line carries -1/3.
        assert_abs_diff_eq!(flows[5], -1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn reference_bus_does_not_change_flows() {
        let lines = vec![
            Line::new(0, 1, 0.2, 5.0),
            Line::new(1, 2, 0.4, 5.0),
            Line::new(0, 2, 0.3, 5.0),
            Line::new(2, 3, 0.1, 5.0),
        ];
        let h0 = build_shift_factors(&lines, 4, 0).unwrap();
        let h2 = build_shift_factors(&lines, 4, 2).unwrap();
        let v = dvec(&[1.5, -0.5, 2.0, -3.0]);
        let f0 = h0.flows(&v);
        let f2 = h2.flows(&v);
        assert_abs_diff_eq!((f0 - f2).norm(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let lines = vec![Line::new(0, 1, 0.1, 1.0)];
        let err = build_shift_factors(&lines, 3, 0).unwrap_err();
        assert!(matches!(err, NetworkError::DisconnectedGraph(2)));
    }

    #[test]
    fn nonpositive_reactance_is_rejected() {
        let lines = vec![Line::new(0, 1, 0.0, 1.0)];
        let err = build_shift_factors(&lines, 2, 0).unwrap_err();
        assert!(matches!(err, NetworkError::InvalidReactance { .. }));
    }

    #[test]
    fn zero_injection_is_feasible() {
        let lines = vec![Line::new(0, 1, 0.1, 3.0)];
        let poly = build_polytope(&lines, 2, 0).unwrap();
        let verdict = check_injection_feasible(&dvec(&[0.0, 0.0]), &poly, 1e-6);
        assert!(verdict.is_feasible());
    }

    #[test]
    fn flow_at_capacity_is_feasible() {
        // Instance B network: one line, 3 MW cap, flow exactly at 3.
        let lines = vec![Line::new(0, 1, 0.1, 3.0)];
        let poly = build_polytope(&lines, 2, 0).unwrap();
        let verdict = check_injection_feasible(&dvec(&[3.0, -3.0]), &poly, 1e-6);
        assert!(verdict.is_feasible());
    }

    #[test]
    fn overloaded_line_reports_forward_violation() {
        let lines = vec![Line::new(0, 1, 0.1, 3.0)];
        let poly = build_polytope(&lines, 2, 0).unwrap();
        match check_injection_feasible(&dvec(&[4.0, -4.0]), &poly, 1e-6) {
            FeasibilityVerdict::Infeasible(violations) => {
                assert_eq!(violations.len(), 1);
                match &violations[0] {
                    InjectionViolation::FlowLimit { row, excess } => {
                        assert_eq!(*row, 0);
                        assert_abs_diff_eq!(*excess, 1.0, epsilon = 1e-12);
                    }
                    other => panic!("unexpected violation {other:?}"),
                }
            }
            FeasibilityVerdict::Feasible => panic!("expected infeasible"),
        }
    }

    #[test]
    fn unbalanced_injection_reports_imbalance() {
        let lines = vec![Line::new(0, 1, 0.1, 3.0)];
        let poly = build_polytope(&lines, 2, 0).unwrap();
        match check_injection_feasible(&dvec(&[1.0, 0.5]), &poly, 1e-6) {
            FeasibilityVerdict::Infeasible(violations) => {
                assert!(violations
                    .iter()
                    .any(|v| matches!(v, InjectionViolation::Balance { .. })));
            }
            FeasibilityVerdict::Feasible => panic!("expected infeasible"),
        }
    }

    #[test]
    fn reversal_rows_negate_forward_rows() {
        let lines = vec![
            Line::new(0, 1, 0.2, 5.0),
            Line::new(1, 2, 0.4, 5.0),
            Line::new(0, 2, 0.3, 5.0),
        ];
        let h = build_shift_factors(&lines, 3, 1).unwrap();
        let m = h.num_lines();
        for l in 0..m {
            for j in 0..3 {
                assert_eq!(h.entries()[(l, j)], -h.entries()[(m + l, j)]);
            }
        }
    }

    #[test]
    fn shift_factor_rank_is_n_minus_one() {
        let lines = vec![
            Line::new(0, 1, 0.2, 5.0),
            Line::new(1, 2, 0.4, 5.0),
            Line::new(0, 2, 0.3, 5.0),
            Line::new(2, 3, 0.1, 5.0),
        ];
        let h = build_shift_factors(&lines, 4, 0).unwrap();
        let svd = h.entries().clone().svd(false, false);
        let rank = svd.singular_values.iter().filter(|&&s| s > 1e-9).count();
        assert_eq!(rank, 3);
    }

    #[test]
    fn asymmetric_reverse_capacity_applies_to_reverse_row() {
        let mut line = Line::new(0, 1, 0.1, 3.0);
        line.capacity_reverse = Some(1.0);
        let poly = build_polytope(&[line], 2, 0).unwrap();
        // 2 MW flowing 1 -> 0 exceeds the 1 MW reverse rating.
        match check_injection_feasible(&dvec(&[-2.0, 2.0]), &poly, 1e-6) {
            FeasibilityVerdict::Infeasible(violations) => {
                assert!(matches!(
                    violations[0],
                    InjectionViolation::FlowLimit { row: 1, .. }
                ));
            }
            FeasibilityVerdict::Feasible => panic!("expected infeasible"),
        }
    }
}
