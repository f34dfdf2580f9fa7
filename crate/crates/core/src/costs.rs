//! Per-node, per-period convex cost/benefit curves.
//!
//! A curve covers both generation and consumption at one node: positive
//! output is costed, negative output (consumption) carries negative
//! cost, i.e. benefit. Curves are anchored at zero (`C(0) = 0`) and
//! must have nondecreasing, nonnegative marginal price over a bounded
//! domain containing zero. Piecewise-linear curves model block bids;
//! their kinks make prices set-valued, so marginal queries return an
//! interval rather than a point.

use thiserror::Error;

/// Marginal-price block: `price` $/MWh applies on `[from, to]` MW.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub price: f64,
    pub from: f64,
    pub to: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CostKind {
    /// `C(v) = a v^2 + b v` (marginal price `2 a v + b`).
    Quadratic { a: f64, b: f64 },
    /// Contiguous blocks with nondecreasing prices.
    PiecewiseLinear { segments: Vec<Segment> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostFunction {
    kind: CostKind,
    v_min: f64,
    v_max: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("domain [{v_min}, {v_max}] must contain 0 with v_min <= v_max")]
    InvalidDomain { v_min: f64, v_max: f64 },
    #[error("quadratic coefficient a = {0} must be nonnegative")]
    NegativeCurvature(f64),
    #[error("marginal price {price} at v = {at} is negative; curve would be decreasing")]
    DecreasingCurve { price: f64, at: f64 },
    #[error("piecewise segments must be contiguous: segment {index} starts at {found}, expected {expected}")]
    NonContiguousSegments {
        index: usize,
        expected: f64,
        found: f64,
    },
    #[error("piecewise prices must be nondecreasing: segment {index} has price {price} below previous {previous}")]
    NonConvexSegments {
        index: usize,
        price: f64,
        previous: f64,
    },
    #[error("piecewise curve needs at least one segment")]
    EmptySegments,
    #[error("segment {index} has from {from} >= to {to}")]
    EmptySegment { index: usize, from: f64, to: f64 },
    #[error("value {value} outside domain [{v_min}, {v_max}]")]
    DomainViolation { value: f64, v_min: f64, v_max: f64 },
}

impl CostFunction {
    pub fn quadratic(a: f64, b: f64, v_min: f64, v_max: f64) -> Result<Self, CostError> {
        if !(v_min <= 0.0 && 0.0 <= v_max && v_min < v_max || (v_min == 0.0 && v_max == 0.0)) {
            return Err(CostError::InvalidDomain { v_min, v_max });
        }
        if a < 0.0 {
            return Err(CostError::NegativeCurvature(a));
        }
        let left_marginal = 2.0 * a * v_min + b;
        if left_marginal < 0.0 {
            return Err(CostError::DecreasingCurve {
                price: left_marginal,
                at: v_min,
            });
        }
        Ok(Self {
            kind: CostKind::Quadratic { a, b },
            v_min,
            v_max,
        })
    }

    /// A fixed output of exactly zero (degenerate domain `{0}`).
    pub fn fixed_zero() -> Self {
        Self {
            kind: CostKind::Quadratic { a: 0.0, b: 0.0 },
            v_min: 0.0,
            v_max: 0.0,
        }
    }

    pub fn piecewise(segments: Vec<Segment>) -> Result<Self, CostError> {
        if segments.is_empty() {
            return Err(CostError::EmptySegments);
        }
        let mut previous_price = f64::NEG_INFINITY;
        for (index, seg) in segments.iter().enumerate() {
            if seg.from >= seg.to {
                return Err(CostError::EmptySegment {
                    index,
                    from: seg.from,
                    to: seg.to,
                });
            }
            if index > 0 {
                let expected = segments[index - 1].to;
                if (seg.from - expected).abs() > 1e-9 {
                    return Err(CostError::NonContiguousSegments {
                        index,
                        expected,
                        found: seg.from,
                    });
                }
            }
            if seg.price < 0.0 {
                return Err(CostError::DecreasingCurve {
                    price: seg.price,
                    at: seg.from,
                });
            }
            if seg.price < previous_price {
                return Err(CostError::NonConvexSegments {
                    index,
                    price: seg.price,
                    previous: previous_price,
                });
            }
            previous_price = seg.price;
        }
        let v_min = segments[0].from;
        let v_max = segments[segments.len() - 1].to;
        if !(v_min <= 0.0 && 0.0 <= v_max) {
            return Err(CostError::InvalidDomain { v_min, v_max });
        }
        Ok(Self {
            kind: CostKind::PiecewiseLinear { segments },
            v_min,
            v_max,
        })
    }

    /// Single marginal price `price` on `[from, to]`.
    pub fn linear(price: f64, from: f64, to: f64) -> Result<Self, CostError> {
        Self::piecewise(vec![Segment { price, from, to }])
    }

    pub fn kind(&self) -> &CostKind {
        &self.kind
    }

    pub fn v_min(&self) -> f64 {
        self.v_min
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn domain_contains(&self, v: f64, tol: f64) -> bool {
        v >= self.v_min - tol && v <= self.v_max + tol
    }

    /// True when the marginal price is zero over a whole block (flagged
    /// by ingestion as a warning, not an error).
    pub fn has_zero_marginal(&self) -> bool {
        match &self.kind {
            CostKind::Quadratic { a, b } => *a == 0.0 && *b == 0.0 && self.v_min < self.v_max,
            CostKind::PiecewiseLinear { segments } => segments.iter().any(|s| s.price == 0.0),
        }
    }

    /// Interior breakpoints where the marginal price may jump.
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.kind {
            CostKind::Quadratic { .. } => Vec::new(),
            CostKind::PiecewiseLinear { segments } => segments
                .windows(2)
                .map(|w| w[0].to)
                .filter(|&bp| bp > self.v_min && bp < self.v_max)
                .collect(),
        }
    }
}

/// Per-node, per-period table of cost curves.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSchedule {
    /// `table[node][period]`.
    table: Vec<Vec<CostFunction>>,
}

impl CostSchedule {
    pub fn new(table: Vec<Vec<CostFunction>>) -> Result<Self, CostError> {
        let horizon = table.first().map(|row| row.len()).unwrap_or(0);
        for row in &table {
            assert_eq!(row.len(), horizon, "ragged cost schedule");
        }
        Ok(Self { table })
    }

    /// Same curve at every period for each node.
    pub fn uniform(per_node: Vec<CostFunction>, horizon: usize) -> Self {
        Self {
            table: per_node
                .into_iter()
                .map(|f| vec![f; horizon])
                .collect(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.table.len()
    }

    pub fn horizon(&self) -> usize {
        self.table.first().map(|row| row.len()).unwrap_or(0)
    }

    pub fn at(&self, node: usize, period: usize) -> &CostFunction {
        &self.table[node][period]
    }
}

/// Subgradient interval `[lo, hi]` of a curve at a point; an unbounded
/// side (at a domain boundary) is an infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalInterval {
    pub lo: f64,
    pub hi: f64,
}

impl MarginalInterval {
    /// Distance from `price` to the interval (zero when inside).
    pub fn distance(&self, price: f64) -> f64 {
        (self.lo - price).max(price - self.hi).max(0.0)
    }

    pub fn contains(&self, price: f64, tol: f64) -> bool {
        self.distance(price) <= tol
    }
}

/// Exact cost at `v`: the integral of the marginal price from 0 to `v`.
pub fn evaluate_cost(f: &CostFunction, v: f64) -> Result<f64, CostError> {
    if !f.domain_contains(v, 0.0) {
        return Err(CostError::DomainViolation {
            value: v,
            v_min: f.v_min,
            v_max: f.v_max,
        });
    }
    Ok(match f.kind() {
        CostKind::Quadratic { a, b } => a * v * v + b * v,
        CostKind::PiecewiseLinear { segments } => {
            let mut total = 0.0;
            for seg in segments {
                // Overlap of [min(0,v), max(0,v)] with the segment,
                // signed by the direction of integration.
                let lo = seg.from.max(v.min(0.0));
                let hi = seg.to.min(v.max(0.0));
                if hi > lo {
                    total += seg.price * (hi - lo) * v.signum();
                }
            }
            total
        }
    })
}

/// Marginal price interval at `v`, widening to both sides of any kink
/// within `v_tol` and opening toward infinity at the domain boundary.
pub fn subgradient_interval(
    f: &CostFunction,
    v: f64,
    v_tol: f64,
) -> Result<MarginalInterval, CostError> {
    if !f.domain_contains(v, v_tol) {
        return Err(CostError::DomainViolation {
            value: v,
            v_min: f.v_min,
            v_max: f.v_max,
        });
    }
    let at_lower = v <= f.v_min + v_tol;
    let at_upper = v >= f.v_max - v_tol;
    let (mut lo, mut hi) = match f.kind() {
        CostKind::Quadratic { a, b } => {
            let lo = 2.0 * a * (v - v_tol).max(f.v_min) + b;
            let hi = 2.0 * a * (v + v_tol).min(f.v_max) + b;
            (lo, hi)
        }
        CostKind::PiecewiseLinear { segments } => {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for seg in segments {
                if v >= seg.from - v_tol && v <= seg.to + v_tol {
                    lo = lo.min(seg.price);
                    hi = hi.max(seg.price);
                }
            }
            (lo, hi)
        }
    };
    if at_lower {
        lo = f64::NEG_INFINITY;
    }
    if at_upper {
        hi = f64::INFINITY;
    }
    Ok(MarginalInterval { lo, hi })
}

/// Marginal price at `v` with exact kink detection.
pub fn marginal_cost(f: &CostFunction, v: f64) -> Result<MarginalInterval, CostError> {
    subgradient_interval(f, v, 1e-9 * (1.0 + v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quadratic_cost_is_a_v_squared() {
        let f = CostFunction::quadratic(1.0, 0.0, 0.0, 100.0).unwrap();
        assert_abs_diff_eq!(evaluate_cost(&f, 3.0).unwrap(), 9.0);
        assert_abs_diff_eq!(evaluate_cost(&f, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn linear_benefit_is_negative_cost() {
        let f = CostFunction::linear(10.0, -6.0, 0.0).unwrap();
        assert_abs_diff_eq!(evaluate_cost(&f, -5.0).unwrap(), -50.0);
    }

    #[test]
    fn quadratic_marginal_is_derivative() {
        let f = CostFunction::quadratic(1.0, 0.0, 0.0, 100.0).unwrap();
        let m = marginal_cost(&f, 3.0).unwrap();
        assert_abs_diff_eq!(m.lo, 6.0, epsilon = 1e-7);
        assert_abs_diff_eq!(m.hi, 6.0, epsilon = 1e-7);
    }

    #[test]
    fn kink_yields_both_slopes() {
        let f = CostFunction::piecewise(vec![
            Segment {
                price: 2.0,
                from: 0.0,
                to: 5.0,
            },
            Segment {
                price: 7.0,
                from: 5.0,
                to: 10.0,
            },
        ])
        .unwrap();
        let m = marginal_cost(&f, 5.0).unwrap();
        assert_eq!(m.lo, 2.0);
        assert_eq!(m.hi, 7.0);
        // The kink also widens the plain domain check: hi opens at 10.
        let boundary = marginal_cost(&f, 10.0).unwrap();
        assert_eq!(boundary.lo, 7.0);
        assert_eq!(boundary.hi, f64::INFINITY);
    }

    #[test]
    fn interior_benefit_price_is_flat() {
        let f = CostFunction::linear(10.0, -6.0, 0.0).unwrap();
        let m = marginal_cost(&f, -2.0).unwrap();
        assert_eq!(m.lo, 10.0);
        assert_eq!(m.hi, 10.0);
    }

    #[test]
    fn domain_violation_is_reported() {
        let f = CostFunction::quadratic(1.0, 0.0, 0.0, 4.0).unwrap();
        assert!(matches!(
            evaluate_cost(&f, 5.0),
            Err(CostError::DomainViolation { .. })
        ));
    }

    #[test]
    fn decreasing_prices_are_rejected() {
        let err = CostFunction::piecewise(vec![
            Segment {
                price: 7.0,
                from: 0.0,
                to: 5.0,
            },
            Segment {
                price: 2.0,
                from: 5.0,
                to: 10.0,
            },
        ])
        .unwrap_err();
        assert!(matches!(err, CostError::NonConvexSegments { .. }));
    }

    #[test]
    fn decreasing_quadratic_is_rejected() {
        // Marginal at v_min = -4 would be 2*1*(-4) + 2 = -6.
        assert!(matches!(
            CostFunction::quadratic(1.0, 2.0, -4.0, 4.0),
            Err(CostError::DecreasingCurve { .. })
        ));
    }

    #[test]
    fn gap_between_segments_is_rejected() {
        let err = CostFunction::piecewise(vec![
            Segment {
                price: 2.0,
                from: -1.0,
                to: 0.0,
            },
            Segment {
                price: 3.0,
                from: 0.5,
                to: 1.0,
            },
        ])
        .unwrap_err();
        assert!(matches!(err, CostError::NonContiguousSegments { .. }));
    }

    #[test]
    fn piecewise_integral_crosses_zero_correctly() {
        let f = CostFunction::piecewise(vec![
            Segment {
                price: 4.0,
                from: -2.0,
                to: 0.0,
            },
            Segment {
                price: 6.0,
                from: 0.0,
                to: 3.0,
            },
        ])
        .unwrap();
        assert_abs_diff_eq!(evaluate_cost(&f, 2.0).unwrap(), 12.0);
        assert_abs_diff_eq!(evaluate_cost(&f, -1.5).unwrap(), -6.0);
        assert_abs_diff_eq!(evaluate_cost(&f, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn finite_difference_matches_marginal_away_from_kinks() {
        let cases = vec![
            CostFunction::quadratic(0.7, 8.0, -5.0, 5.0).unwrap(),
            CostFunction::piecewise(vec![
                Segment {
                    price: 1.0,
                    from: -4.0,
                    to: 1.0,
                },
                Segment {
                    price: 9.0,
                    from: 1.0,
                    to: 4.0,
                },
            ])
            .unwrap(),
        ];
        let step = 1e-5;
        for f in &cases {
            for &v in &[-3.0, -0.5, 0.5, 2.0, 3.5] {
                let slope = (evaluate_cost(f, v + step).unwrap()
                    - evaluate_cost(f, v - step).unwrap())
                    / (2.0 * step);
                let m = marginal_cost(f, v).unwrap();
                assert!(
                    (slope - m.lo).abs() < 1e-6 && (slope - m.hi).abs() < 1e-6,
                    "fd slope {slope} vs interval [{}, {}] at v={v}",
                    m.lo,
                    m.hi
                );
            }
        }
    }

    #[test]
    fn sign_conditions_hold_for_positive_prices() {
        let f = CostFunction::piecewise(vec![
            Segment {
                price: 4.0,
                from: -2.0,
                to: 0.0,
            },
            Segment {
                price: 6.0,
                from: 0.0,
                to: 3.0,
            },
        ])
        .unwrap();
        assert!(evaluate_cost(&f, 1.0).unwrap() > 0.0);
        assert!(evaluate_cost(&f, -1.0).unwrap() < 0.0);
    }
}
