//! Financial rights: point-to-point transmission rights (FTR),
//! flowgate rights (FGR), financial storage rights (FSR), and energy
//! capacity rights (ECR), with portfolio aggregation and settlement
//! against a solved equilibrium.
//!
//! Rent rules:
//!
//! * FTR `(i, j, t)`: pays `(lambda_j - lambda_i)' t`, credit or
//!   liability.
//! * FGR `(l, f)`: pays the line shadow rent `mu_l' f`, never negative.
//! * FSR `(i, s)`: pays `lambda_i' s` on a signed profile.
//! * ECR `(i, e)`: pays the device shadow rent `nu_up_i' e`, never
//!   negative.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dispatch::EquilibriumSolution;

#[derive(Debug, Error)]
pub enum RightsError {
    #[error("profile has {found} periods, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("node index {index} out of range for {n} nodes")]
    InvalidNode { index: usize, n: usize },
    #[error("directed line index {index} out of range for {num_directed} directed lines")]
    InvalidLine { index: usize, num_directed: usize },
    #[error("transmission right connects node {0} to itself")]
    SelfPaired(usize),
    #[error("{kind} profile must be nonnegative, entry {period} is {value}")]
    NegativeProfile {
        kind: &'static str,
        period: usize,
        value: f64,
    },
}

fn require_nonnegative(
    kind: &'static str,
    profile: &DVector<f64>,
) -> Result<(), RightsError> {
    for (period, &value) in profile.iter().enumerate() {
        if value < 0.0 {
            return Err(RightsError::NegativeProfile {
                kind,
                period,
                value,
            });
        }
    }
    Ok(())
}

/// Point-to-point transmission right.
#[derive(Debug, Clone, PartialEq)]
pub struct Ftr {
    pub injection_node: usize,
    pub withdrawal_node: usize,
    pub profile: DVector<f64>,
}

impl Ftr {
    pub fn new(
        injection_node: usize,
        withdrawal_node: usize,
        profile: DVector<f64>,
    ) -> Result<Self, RightsError> {
        if injection_node == withdrawal_node {
            return Err(RightsError::SelfPaired(injection_node));
        }
        require_nonnegative("FTR", &profile)?;
        Ok(Self {
            injection_node,
            withdrawal_node,
            profile,
        })
    }
}

/// Flowgate right on one directed line `l` in `0..2m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Fgr {
    pub directed_line: usize,
    pub profile: DVector<f64>,
}

impl Fgr {
    pub fn new(directed_line: usize, profile: DVector<f64>) -> Result<Self, RightsError> {
        require_nonnegative("FGR", &profile)?;
        Ok(Self {
            directed_line,
            profile,
        })
    }
}

/// Financial storage right: a signed nodal power profile.
#[derive(Debug, Clone, PartialEq)]
pub struct Fsr {
    pub node: usize,
    pub profile: DVector<f64>,
}

impl Fsr {
    pub fn new(node: usize, profile: DVector<f64>) -> Self {
        Self { node, profile }
    }

    /// A nonzero sum embeds a pure forward energy position on top of
    /// the storage hedge; ingestion warns about it.
    pub fn energy_imbalance(&self) -> f64 {
        self.profile.sum()
    }
}

/// Energy capacity right on the device at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecr {
    pub node: usize,
    pub profile: DVector<f64>,
}

impl Ecr {
    pub fn new(node: usize, profile: DVector<f64>) -> Result<Self, RightsError> {
        require_nonnegative("ECR", &profile)?;
        Ok(Self { node, profile })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Right {
    Ftr(Ftr),
    Fgr(Fgr),
    Fsr(Fsr),
    Ecr(Ecr),
}

/// Aggregated collections of the four right classes, keyed the way
/// rents settle: FTRs by (injection, withdrawal) pair, FGRs by
/// directed line, FSRs and ECRs by node.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RightsPortfolio {
    pub ftr: BTreeMap<(usize, usize), DVector<f64>>,
    pub fgr: BTreeMap<usize, DVector<f64>>,
    pub fsr: BTreeMap<usize, DVector<f64>>,
    pub ecr: BTreeMap<usize, DVector<f64>>,
    num_nodes: usize,
    num_directed_lines: usize,
    horizon: usize,
}

impl RightsPortfolio {
    pub fn empty(num_nodes: usize, num_directed_lines: usize, horizon: usize) -> Self {
        Self {
            num_nodes,
            num_directed_lines,
            horizon,
            ..Default::default()
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_directed_lines(&self) -> usize {
        self.num_directed_lines
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.ftr.is_empty() && self.fgr.is_empty() && self.fsr.is_empty() && self.ecr.is_empty()
    }

    fn add_vec<K: Ord>(map: &mut BTreeMap<K, DVector<f64>>, key: K, profile: &DVector<f64>) {
        map.entry(key)
            .and_modify(|existing| *existing += profile)
            .or_insert_with(|| profile.clone());
    }

    pub fn add(&mut self, right: Right) -> Result<(), RightsError> {
        let expected = self.horizon;
        let check_len = |len: usize| -> Result<(), RightsError> {
            if len != expected {
                Err(RightsError::DimensionMismatch {
                    expected,
                    found: len,
                })
            } else {
                Ok(())
            }
        };
        let check_node = |node: usize| -> Result<(), RightsError> {
            if node >= self.num_nodes {
                Err(RightsError::InvalidNode {
                    index: node,
                    n: self.num_nodes,
                })
            } else {
                Ok(())
            }
        };
        match right {
            Right::Ftr(r) => {
                check_len(r.profile.len())?;
                check_node(r.injection_node)?;
                check_node(r.withdrawal_node)?;
                Self::add_vec(
                    &mut self.ftr,
                    (r.injection_node, r.withdrawal_node),
                    &r.profile,
                );
            }
            Right::Fgr(r) => {
                check_len(r.profile.len())?;
                if r.directed_line >= self.num_directed_lines {
                    return Err(RightsError::InvalidLine {
                        index: r.directed_line,
                        num_directed: self.num_directed_lines,
                    });
                }
                Self::add_vec(&mut self.fgr, r.directed_line, &r.profile);
            }
            Right::Fsr(r) => {
                check_len(r.profile.len())?;
                check_node(r.node)?;
                Self::add_vec(&mut self.fsr, r.node, &r.profile);
            }
            Right::Ecr(r) => {
                check_len(r.profile.len())?;
                check_node(r.node)?;
                Self::add_vec(&mut self.ecr, r.node, &r.profile);
            }
        }
        Ok(())
    }

    /// Net FTR injection vectors `t(k)` as an n x N matrix:
    /// `t_i(k) = sum_j (t_ij(k) - t_ji(k))`.
    pub fn net_injections(&self) -> DMatrix<f64> {
        let mut t = DMatrix::zeros(self.num_nodes, self.horizon);
        for (&(i, j), profile) in &self.ftr {
            for k in 0..self.horizon {
                t[(i, k)] += profile[k];
                t[(j, k)] -= profile[k];
            }
        }
        t
    }

    /// FSR withdrawal vectors `s(k)` as an n x N matrix.
    pub fn withdrawals(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.num_nodes, self.horizon);
        for (&i, profile) in &self.fsr {
            for k in 0..self.horizon {
                s[(i, k)] += profile[k];
            }
        }
        s
    }

    /// Flowgate vectors `f(k)` as a 2m x N matrix.
    pub fn flowgates(&self) -> DMatrix<f64> {
        let mut f = DMatrix::zeros(self.num_directed_lines, self.horizon);
        for (&l, profile) in &self.fgr {
            for k in 0..self.horizon {
                f[(l, k)] += profile[k];
            }
        }
        f
    }

    /// ECR deratings `e_i` as an n x N matrix.
    pub fn capacity_deratings(&self) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(self.num_nodes, self.horizon);
        for (&i, profile) in &self.ecr {
            for k in 0..self.horizon {
                e[(i, k)] += profile[k];
            }
        }
        e
    }

    /// Sum of two portfolios over the same market.
    pub fn merge(&self, other: &RightsPortfolio) -> RightsPortfolio {
        let mut out = self.clone();
        for (key, profile) in &other.ftr {
            Self::add_vec(&mut out.ftr, *key, profile);
        }
        for (key, profile) in &other.fgr {
            Self::add_vec(&mut out.fgr, *key, profile);
        }
        for (key, profile) in &other.fsr {
            Self::add_vec(&mut out.fsr, *key, profile);
        }
        for (key, profile) in &other.ecr {
            Self::add_vec(&mut out.ecr, *key, profile);
        }
        out
    }

    /// Scales every profile by `alpha`.
    pub fn scale(&self, alpha: f64) -> RightsPortfolio {
        let mut out = self.clone();
        for profile in out
            .ftr
            .values_mut()
            .chain(out.fgr.values_mut())
            .chain(out.fsr.values_mut())
            .chain(out.ecr.values_mut())
        {
            *profile *= alpha;
        }
        out
    }
}

/// Sums a list of rights into a portfolio, validating dimensions.
pub fn aggregate(
    rights: impl IntoIterator<Item = Right>,
    num_nodes: usize,
    num_directed_lines: usize,
    horizon: usize,
) -> Result<RightsPortfolio, RightsError> {
    let mut portfolio = RightsPortfolio::empty(num_nodes, num_directed_lines, horizon);
    for right in rights {
        portfolio.add(right)?;
    }
    Ok(portfolio)
}

/// Settled rents per right key and class totals.
#[derive(Debug, Clone)]
pub struct RentStatement {
    pub ftr: BTreeMap<(usize, usize), f64>,
    pub fgr: BTreeMap<usize, f64>,
    pub fsr: BTreeMap<usize, f64>,
    pub ecr: BTreeMap<usize, f64>,
    /// Transmission-class total (FTR + FGR rents).
    pub transmission_total: f64,
    /// Storage-class total (FSR + ECR rents).
    pub storage_total: f64,
}

impl RentStatement {
    pub fn total(&self) -> f64 {
        self.transmission_total + self.storage_total
    }
}

/// Settles every right in the portfolio at the equilibrium prices and
/// shadow prices.
pub fn rent(portfolio: &RightsPortfolio, sol: &EquilibriumSolution) -> RentStatement {
    let horizon = portfolio.horizon();
    let mut statement = RentStatement {
        ftr: BTreeMap::new(),
        fgr: BTreeMap::new(),
        fsr: BTreeMap::new(),
        ecr: BTreeMap::new(),
        transmission_total: 0.0,
        storage_total: 0.0,
    };
    for (&(i, j), profile) in &portfolio.ftr {
        let mut value = 0.0;
        for k in 0..horizon {
            value += (sol.prices[(j, k)] - sol.prices[(i, k)]) * profile[k];
        }
        statement.ftr.insert((i, j), value);
        statement.transmission_total += value;
    }
    for (&l, profile) in &portfolio.fgr {
        let mut value = 0.0;
        for k in 0..horizon {
            value += sol.line_prices[(l, k)] * profile[k];
        }
        statement.fgr.insert(l, value);
        statement.transmission_total += value;
    }
    for (&i, profile) in &portfolio.fsr {
        let mut value = 0.0;
        for k in 0..horizon {
            value += sol.prices[(i, k)] * profile[k];
        }
        statement.fsr.insert(i, value);
        statement.storage_total += value;
    }
    for (&i, profile) in &portfolio.ecr {
        let mut value = 0.0;
        for k in 0..horizon {
            value += sol.soc_upper_prices[(i, k)] * profile[k];
        }
        statement.ecr.insert(i, value);
        statement.storage_total += value;
    }
    statement
}
