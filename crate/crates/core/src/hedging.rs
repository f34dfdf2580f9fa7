//! Hedging a fixed-price bilateral contract with a CFD, an FTR, and an
//! FSR.
//!
//! A supplier at node `i` delivers profile `q_i` and a demander at
//! node `j` consumes profile `q_j`, balancing over the horizon to the
//! contract quantity `q_c` at price `lambda_c`. Both trade at their
//! nodal spot prices, so the demander's exposure after the CFD splits
//! exactly into a fixed leg, a transmission congestion charge
//! `(lambda_j - lambda_i)' q_i`, and a storage congestion charge
//! `lambda_j' (q_j - q_i)`. The FTR `t_ij := q_i` and the FSR
//! `s_j := q_j - q_i` cancel those two charges for any price path,
//! netting the parties to exactly +/- lambda_c q_c.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::rights::{Fsr, Ftr};

#[derive(Debug, Error)]
pub enum HedgeError {
    #[error("production sums to {supply} but consumption to {demand}; profiles must balance")]
    ProfileImbalance { supply: f64, demand: f64 },
    #[error("profiles span {qi} and {qj} periods; they must agree")]
    ProfileLengths { qi: usize, qj: usize },
    #[error("prices cover {found} periods, contract needs {expected}")]
    HorizonMismatch { expected: usize, found: usize },
    #[error("node {0} out of range for the price matrix")]
    NodeOutOfRange(usize),
    #[error("{side} profile entry {period} is negative ({value})")]
    NegativeProfile {
        side: &'static str,
        period: usize,
        value: f64,
    },
    #[error(transparent)]
    Rights(#[from] crate::rights::RightsError),
}

const BALANCE_TOLERANCE: f64 = 1e-9;

/// A fixed-price energy contract between two nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BilateralContract {
    pub supplier_node: usize,
    pub demander_node: usize,
    /// Production profile at the supplier node, length N.
    pub supply_profile: DVector<f64>,
    /// Consumption profile at the demander node, length N.
    pub demand_profile: DVector<f64>,
    /// Contract price, $/MWh.
    pub contract_price: f64,
}

impl BilateralContract {
    pub fn new(
        supplier_node: usize,
        demander_node: usize,
        supply_profile: DVector<f64>,
        demand_profile: DVector<f64>,
        contract_price: f64,
    ) -> Result<Self, HedgeError> {
        if supply_profile.len() != demand_profile.len() {
            return Err(HedgeError::ProfileLengths {
                qi: supply_profile.len(),
                qj: demand_profile.len(),
            });
        }
        for (period, &value) in supply_profile.iter().enumerate() {
            if value < 0.0 {
                return Err(HedgeError::NegativeProfile {
                    side: "supply",
                    period,
                    value,
                });
            }
        }
        for (period, &value) in demand_profile.iter().enumerate() {
            if value < 0.0 {
                return Err(HedgeError::NegativeProfile {
                    side: "demand",
                    period,
                    value,
                });
            }
        }
        let supply = supply_profile.sum();
        let demand = demand_profile.sum();
        if (supply - demand).abs() > BALANCE_TOLERANCE {
            return Err(HedgeError::ProfileImbalance { supply, demand });
        }
        Ok(Self {
            supplier_node,
            demander_node,
            supply_profile,
            demand_profile,
            contract_price,
        })
    }

    pub fn horizon(&self) -> usize {
        self.supply_profile.len()
    }

    /// Contracted energy `q_c` (the common profile sum).
    pub fn contract_quantity(&self) -> f64 {
        self.supply_profile.sum()
    }

    fn node_prices(
        &self,
        prices: &DMatrix<f64>,
        node: usize,
    ) -> Result<DVector<f64>, HedgeError> {
        if prices.ncols() != self.horizon() {
            return Err(HedgeError::HorizonMismatch {
                expected: self.horizon(),
                found: prices.ncols(),
            });
        }
        if node >= prices.nrows() {
            return Err(HedgeError::NodeOutOfRange(node));
        }
        Ok(prices.row(node).transpose())
    }
}

/// The instruments that flatten the contract's market exposure.
#[derive(Debug, Clone)]
pub struct HedgePackage {
    /// Demander pays the supplier `lambda_c q_c - lambda_i' q_i`.
    pub cfd_fixed_leg: f64,
    pub ftr: Ftr,
    pub fsr: Fsr,
}

/// The demander's settled exposure, split per charge.
#[derive(Debug, Clone, Copy)]
pub struct ExposureDecomposition {
    /// `lambda_j' q_j`.
    pub spot_charge: f64,
    /// `lambda_c q_c - lambda_i' q_i`.
    pub cfd_charge: f64,
    /// `lambda_c q_c`.
    pub fixed: f64,
    /// `(lambda_j - lambda_i)' q_i`.
    pub transmission_congestion_charge: f64,
    /// `lambda_j' (q_j - q_i)`.
    pub storage_congestion_charge: f64,
}

impl ExposureDecomposition {
    /// Residual of the identity
    /// `spot + cfd = fixed + transmission + storage`.
    pub fn identity_residual(&self) -> f64 {
        (self.spot_charge + self.cfd_charge
            - self.fixed
            - self.transmission_congestion_charge
            - self.storage_congestion_charge)
            .abs()
    }
}

/// Splits the demander's post-CFD exposure into its fixed leg and the
/// two congestion charges.
pub fn decompose_exposure(
    contract: &BilateralContract,
    prices: &DMatrix<f64>,
) -> Result<ExposureDecomposition, HedgeError> {
    let lambda_i = contract.node_prices(prices, contract.supplier_node)?;
    let lambda_j = contract.node_prices(prices, contract.demander_node)?;
    let fixed = contract.contract_price * contract.contract_quantity();
    let supplier_spot = lambda_i.dot(&contract.supply_profile);
    Ok(ExposureDecomposition {
        spot_charge: lambda_j.dot(&contract.demand_profile),
        cfd_charge: fixed - supplier_spot,
        fixed,
        transmission_congestion_charge: (&lambda_j - &lambda_i).dot(&contract.supply_profile),
        storage_congestion_charge: lambda_j
            .dot(&(&contract.demand_profile - &contract.supply_profile)),
    })
}

/// Builds the CFD + FTR + FSR package for a contract. The FSR profile
/// balances to zero by construction.
pub fn synthesize_hedge(contract: &BilateralContract) -> Result<HedgePackage, HedgeError> {
    let ftr = Ftr::new(
        contract.supplier_node,
        contract.demander_node,
        contract.supply_profile.clone(),
    )?;
    let fsr = Fsr::new(
        contract.demander_node,
        &contract.demand_profile - &contract.supply_profile,
    );
    Ok(HedgePackage {
        cfd_fixed_leg: contract.contract_price * contract.contract_quantity(),
        ftr,
        fsr,
    })
}

/// One instrument's cash flow for each party (positive = receives).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerRow {
    pub instrument: &'static str,
    pub supplier: f64,
    pub demander: f64,
}

/// Full settlement of a hedged contract.
#[derive(Debug, Clone)]
pub struct HedgeLedger {
    pub rows: Vec<LedgerRow>,
    pub supplier_total: f64,
    pub demander_total: f64,
}

impl HedgeLedger {
    /// Deviation of the totals from the perfect hedge `+/- lambda_c q_c`.
    pub fn hedge_residual(&self, contract: &BilateralContract) -> f64 {
        let fixed = contract.contract_price * contract.contract_quantity();
        (self.supplier_total - fixed)
            .abs()
            .max((self.demander_total + fixed).abs())
    }
}

/// Settles the spot, CFD, FTR, and FSR legs at the given prices.
pub fn settle_ledger(
    package: &HedgePackage,
    contract: &BilateralContract,
    prices: &DMatrix<f64>,
) -> Result<HedgeLedger, HedgeError> {
    let lambda_i = contract.node_prices(prices, contract.supplier_node)?;
    let lambda_j = contract.node_prices(prices, contract.demander_node)?;
    let supplier_spot = lambda_i.dot(&contract.supply_profile);
    let demander_spot = lambda_j.dot(&contract.demand_profile);
    let cfd = package.cfd_fixed_leg - supplier_spot;
    let ftr_rent = (&lambda_j - &lambda_i).dot(&package.ftr.profile);
    let fsr_rent = lambda_j.dot(&package.fsr.profile);

    let rows = vec![
        LedgerRow {
            instrument: "spot",
            supplier: supplier_spot,
            demander: -demander_spot,
        },
        LedgerRow {
            instrument: "cfd",
            supplier: cfd,
            demander: -cfd,
        },
        LedgerRow {
            instrument: "ftr",
            supplier: 0.0,
            demander: ftr_rent,
        },
        LedgerRow {
            instrument: "fsr",
            supplier: 0.0,
            demander: fsr_rent,
        },
    ];
    let supplier_total = rows.iter().map(|r| r.supplier).sum();
    let demander_total = rows.iter().map(|r| r.demander).sum();
    Ok(HedgeLedger {
        rows,
        supplier_total,
        demander_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dvec(vals: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(vals)
    }

    /// Instance C prices: both nodes see (2, 10).
    fn instance_c_prices() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[2.0, 10.0, 2.0, 10.0])
    }

    fn example_contract() -> BilateralContract {
        BilateralContract::new(0, 1, dvec(&[3.0, 3.0]), dvec(&[2.0, 4.0]), 5.0).unwrap()
    }

    #[test]
    fn exposure_splits_on_instance_c_prices() {
        let exposure = decompose_exposure(&example_contract(), &instance_c_prices()).unwrap();
        assert_abs_diff_eq!(exposure.spot_charge, 44.0, epsilon = 1e-12);
        assert_abs_diff_eq!(exposure.cfd_charge, -6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(exposure.fixed, 30.0, epsilon = 1e-12);
        assert_abs_diff_eq!(exposure.transmission_congestion_charge, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(exposure.storage_congestion_charge, 8.0, epsilon = 1e-12);
        assert!(exposure.identity_residual() <= 1e-9);
    }

    #[test]
    fn uniform_prices_leave_no_congestion_charges() {
        let contract = example_contract();
        let prices = DMatrix::from_element(2, 2, 5.0);
        let exposure = decompose_exposure(&contract, &prices).unwrap();
        assert_abs_diff_eq!(exposure.transmission_congestion_charge, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(exposure.storage_congestion_charge, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            exposure.spot_charge + exposure.cfd_charge,
            exposure.fixed,
            epsilon = 1e-12
        );
    }

    #[test]
    fn matched_profiles_need_no_storage_hedge() {
        let contract =
            BilateralContract::new(0, 1, dvec(&[2.0, 2.0]), dvec(&[2.0, 2.0]), 5.0).unwrap();
        let prices = DMatrix::from_row_slice(2, 2, &[3.0, 9.0, 4.0, 12.0]);
        let exposure = decompose_exposure(&contract, &prices).unwrap();
        assert_abs_diff_eq!(exposure.storage_congestion_charge, 0.0, epsilon = 1e-12);
        let package = synthesize_hedge(&contract).unwrap();
        assert_abs_diff_eq!(package.fsr.profile.amax(), 0.0);
    }

    #[test]
    fn hedge_package_follows_the_construction() {
        let package = synthesize_hedge(&example_contract()).unwrap();
        assert_eq!(package.ftr.profile, dvec(&[3.0, 3.0]));
        assert_eq!(package.fsr.profile, dvec(&[-1.0, 1.0]));
        assert_abs_diff_eq!(package.fsr.energy_imbalance(), 0.0);
    }

    #[test]
    fn single_period_contract_forces_equal_profiles() {
        let contract = BilateralContract::new(0, 1, dvec(&[5.0]), dvec(&[5.0]), 7.0).unwrap();
        let package = synthesize_hedge(&contract).unwrap();
        assert_eq!(package.ftr.profile, dvec(&[5.0]));
        assert_eq!(package.fsr.profile, dvec(&[0.0]));
    }

    #[test]
    fn ledger_nets_both_parties_to_the_contract_value() {
        let contract = example_contract();
        let package = synthesize_hedge(&contract).unwrap();
        let ledger = settle_ledger(&package, &contract, &instance_c_prices()).unwrap();
        assert_abs_diff_eq!(ledger.supplier_total, 30.0, epsilon = 1e-9);
        assert_abs_diff_eq!(ledger.demander_total, -30.0, epsilon = 1e-9);
        // Spot 44 less the 6 CFD rebate less the 8 FSR rent.
        assert_abs_diff_eq!(ledger.rows[0].demander, -44.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ledger.rows[1].demander, 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ledger.rows[2].demander, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ledger.rows[3].demander, 8.0, epsilon = 1e-12);
    }

    #[test]
    fn fsr_leg_equals_the_storage_congestion_charge() {
        let contract = example_contract();
        let prices = DMatrix::from_row_slice(2, 2, &[1.0, 13.0, 6.0, 2.5]);
        let package = synthesize_hedge(&contract).unwrap();
        let ledger = settle_ledger(&package, &contract, &prices).unwrap();
        let exposure = decompose_exposure(&contract, &prices).unwrap();
        assert_abs_diff_eq!(
            ledger.rows[3].demander,
            exposure.storage_congestion_charge,
            epsilon = 1e-12
        );
    }

    #[test]
    fn imbalanced_profiles_are_rejected() {
        assert!(matches!(
            BilateralContract::new(0, 1, dvec(&[3.0]), dvec(&[2.0]), 5.0),
            Err(HedgeError::ProfileImbalance { .. })
        ));
    }

    #[test]
    fn price_horizon_mismatch_is_rejected() {
        let contract = example_contract();
        let prices = DMatrix::from_element(2, 3, 5.0);
        assert!(matches!(
            decompose_exposure(&contract, &prices),
            Err(HedgeError::HorizonMismatch { .. })
        ));
    }
}
