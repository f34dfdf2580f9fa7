//! Nodal energy storage fleet: dynamics and per-node feasibility.
//!
//! Sign convention: `u > 0` extracts energy from the device into the
//! network, `u < 0` injects network energy into the device. States
//! evolve as `z(k+1) = z(k) - u(k)` from the empty initial state, so a
//! power sequence `u` is feasible for capacity `b` exactly when
//! `0 <= L u <= b * 1`, with `L` the lower-triangular cumulative matrix
//! whose nonzero entries are all -1.

use nalgebra::{DMatrix, DVector};

/// Per-node energy storage capacities; `b[i] = 0` means no device.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageFleet {
    capacities: DVector<f64>,
}

impl StorageFleet {
    /// All capacities must be nonnegative.
    pub fn new(capacities: DVector<f64>) -> Result<Self, String> {
        if let Some(i) = capacities.iter().position(|&b| b < 0.0) {
            return Err(format!("storage capacity at node {i} is negative"));
        }
        Ok(Self { capacities })
    }

    pub fn none(n: usize) -> Self {
        Self {
            capacities: DVector::zeros(n),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.capacities.len()
    }

    pub fn capacity(&self, node: usize) -> f64 {
        self.capacities[node]
    }

    pub fn capacities(&self) -> &DVector<f64> {
        &self.capacities
    }

    /// Indices of nodes carrying a device (`b > 0`).
    pub fn storage_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&i| self.capacities[i] > 0.0)
            .collect()
    }
}

/// The N x N cumulative matrix `L` with `[L]_{kl} = -1` for `k >= l`.
#[derive(Debug, Clone)]
pub struct CumulativeMatrix {
    horizon: usize,
}

impl CumulativeMatrix {
    pub fn new(horizon: usize) -> Self {
        Self { horizon }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.horizon, self.horizon, |k, l| {
            if k >= l {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// `L * u`: the negated running sums of `u`.
    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.horizon);
        let mut acc = 0.0;
        for k in 0..self.horizon {
            acc -= u[k];
            out[k] = acc;
        }
        out
    }

    /// `L' * w`: reversed running sums, used to fold storage shadow
    /// prices into per-period form.
    pub fn apply_transpose(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.horizon);
        let mut acc = 0.0;
        for k in (0..self.horizon).rev() {
            acc -= w[k];
            out[k] = acc;
        }
        out
    }

    /// Solves `L' x = rhs` (unit lower-triangular transpose, so a
    /// forward substitution on the reversed index order).
    pub fn solve_transpose(&self, rhs: &DVector<f64>) -> DVector<f64> {
        // L' is upper triangular with -1 on and above the diagonal:
        // (L'x)_k = -sum_{l>=k} x_l, hence x_k = (L'x)_{k+1} - (L'x)_k.
        let n = self.horizon;
        let mut x = DVector::zeros(n);
        for k in 0..n {
            let next = if k + 1 < n { rhs[k + 1] } else { 0.0 };
            x[k] = next - rhs[k];
        }
        x
    }
}

/// One node's extraction sequence and the state trajectory it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageTrajectory {
    pub extractions: DVector<f64>,
    /// Length N+1, starting at the empty state.
    pub states: DVector<f64>,
}

/// Runs the storage recursion `z(k+1) = z(k) - u(k)` from `z(0) = 0`.
pub fn simulate_soc(u: &DVector<f64>) -> DVector<f64> {
    let n = u.len();
    let mut z = DVector::zeros(n + 1);
    for k in 0..n {
        z[k + 1] = z[k] - u[k];
    }
    z
}

impl StorageTrajectory {
    pub fn from_extractions(u: DVector<f64>) -> Self {
        let states = simulate_soc(&u);
        Self {
            extractions: u,
            states,
        }
    }
}

/// A state-of-charge bound violated at one period.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageViolation {
    /// Period index `k` at which the post-period state breaks a bound.
    pub period: usize,
    /// Positive amount by which the bound is exceeded.
    pub amount: f64,
    pub bound: StorageBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StorageBound {
    /// State fell below empty (discharging energy that is not stored).
    Lower,
    /// State exceeded the device capacity.
    Upper,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StorageVerdict {
    Feasible,
    Infeasible(Vec<StorageViolation>),
}

impl StorageVerdict {
    pub fn is_feasible(&self) -> bool {
        matches!(self, StorageVerdict::Feasible)
    }
}

/// Checks `-tol <= (L u)_k <= b + tol` for every period.
pub fn check_storage_feasible(u: &DVector<f64>, capacity: f64, tol: f64) -> StorageVerdict {
    let cumulative = CumulativeMatrix::new(u.len()).apply(u);
    let mut violations = Vec::new();
    for k in 0..u.len() {
        if cumulative[k] < -tol {
            violations.push(StorageViolation {
                period: k,
                amount: -cumulative[k],
                bound: StorageBound::Lower,
            });
        }
        if cumulative[k] > capacity + tol {
            violations.push(StorageViolation {
                period: k,
                amount: cumulative[k] - capacity,
                bound: StorageBound::Upper,
            });
        }
    }
    if violations.is_empty() {
        StorageVerdict::Feasible
    } else {
        StorageVerdict::Infeasible(violations)
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
    fn idle_storage_stays_empty() {
        let z = simulate_soc(&dvec(&[0.0, 0.0, 0.0]));
        assert_eq!(z, dvec(&[0.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn charge_then_discharge_round_trips() {
        let z = simulate_soc(&dvec(&[-1.0, 1.0]));
        assert_eq!(z, dvec(&[0.0, 1.0, 0.0]));
    }

    #[test]
    fn states_are_cumulative_sums() {
        let z = simulate_soc(&dvec(&[-1.0, -1.0, 2.0]));
        assert_eq!(z, dvec(&[0.0, 1.0, 2.0, 0.0]));
    }

    #[test]
    fn bounds_touching_is_feasible() {
        // L*u = (1, 0): both bounds touched with b = 1.
        let verdict = check_storage_feasible(&dvec(&[-1.0, 1.0]), 1.0, 1e-9);
        assert!(verdict.is_feasible());
    }

    #[test]
    fn overcharge_reports_upper_violation() {
        // L*u = (2, 0) against b = 1.
        match check_storage_feasible(&dvec(&[-2.0, 2.0]), 1.0, 1e-9) {
            StorageVerdict::Infeasible(v) => {
                assert_eq!(v.len(), 1);
                assert_eq!(v[0].period, 0);
                assert_eq!(v[0].bound, StorageBound::Upper);
                assert_abs_diff_eq!(v[0].amount, 1.0);
            }
            StorageVerdict::Feasible => panic!("expected infeasible"),
        }
    }

    #[test]
    fn discharging_empty_device_reports_lower_violation() {
        // L*u = (-1, 0): cannot extract before storing.
        match check_storage_feasible(&dvec(&[1.0, -1.0]), 1.0, 1e-9) {
            StorageVerdict::Infeasible(v) => {
                assert_eq!(v[0].period, 0);
                assert_eq!(v[0].bound, StorageBound::Lower);
                assert_abs_diff_eq!(v[0].amount, 1.0);
            }
            StorageVerdict::Feasible => panic!("expected infeasible"),
        }
    }

    #[test]
    fn cumulative_matrix_matches_recursion() {
        let u = dvec(&[0.5, -2.0, 1.0, 0.25]);
        let l = CumulativeMatrix::new(4);
        let lu_fast = l.apply(&u);
        let lu_dense = l.to_matrix() * &u;
        assert_eq!(lu_fast, lu_dense);
        let z = simulate_soc(&u);
        for k in 0..4 {
            assert_eq!(lu_fast[k], z[k + 1]);
        }
    }

    #[test]
    fn transpose_solve_inverts_apply_transpose() {
        let w = dvec(&[3.0, -1.0, 4.0]);
        let l = CumulativeMatrix::new(3);
        let rhs = l.apply_transpose(&w);
        let back = l.solve_transpose(&rhs);
        assert_abs_diff_eq!((back - w).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_sequence_always_feasible() {
        for b in [0.0, 0.5, 3.0] {
            assert!(check_storage_feasible(&dvec(&[0.0, 0.0, 0.0]), b, 0.0).is_feasible());
        }
    }

    #[test]
    fn negative_capacity_rejected_by_fleet() {
        assert!(StorageFleet::new(dvec(&[1.0, -0.5])).is_err());
    }
}
