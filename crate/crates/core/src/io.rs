//! Human-editable file formats: scenario, portfolio, and contract
//! documents in JSON, with load-time validation that names the
//! offending field.
//!
//! Files index nodes and lines from 1; everything internal is
//! zero-based. Loaders return the parsed value plus a list of
//! warnings for constructs that are legal but suspicious (zero
//! marginal prices, storage-right profiles that embed a net forward
//! energy position).

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costs::{CostFunction, CostSchedule, Segment};
use crate::dispatch::ScenarioSpec;
use crate::hedging::BilateralContract;
use crate::network::Line;
use crate::rights::{Ecr, Fgr, Fsr, Ftr, Right};
use crate::storage::StorageFleet;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {path}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot write {path}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{path}: {message}")]
    Validation { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl ToString) -> IoError {
    IoError::Validation {
        path: path.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineDoc {
    pub from: usize,
    pub to: usize,
    pub reactance: f64,
    pub capacity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity_reverse: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostDoc {
    Quadratic {
        a: f64,
        b: f64,
        vmin: f64,
        vmax: f64,
    },
    Pwl {
        segments: Vec<SegmentDoc>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentDoc {
    pub price: f64,
    pub from: f64,
    pub to: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RightDoc {
    Ftr {
        from: usize,
        to: usize,
        profile: Vec<f64>,
    },
    Fgr {
        line: usize,
        direction: FlowDirection,
        profile: Vec<f64>,
    },
    Fsr {
        node: usize,
        profile: Vec<f64>,
    },
    Ecr {
        node: usize,
        profile: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowDirection {
    Forward,
    Reverse,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub n: usize,
    #[serde(rename = "N")]
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period_hours: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_bus: Option<usize>,
    pub lines: Vec<LineDoc>,
    /// `costs[node][period]`.
    pub costs: Vec<Vec<CostDoc>>,
    pub storage: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rights: Option<Vec<RightDoc>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortfolioDoc {
    pub rights: Vec<RightDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractDoc {
    pub supplier_node: usize,
    pub demander_node: usize,
    pub lambda_c: f64,
    pub q_i: Vec<f64>,
    pub q_j: Vec<f64>,
}

/// A parsed scenario plus any inline rights and load-time warnings.
#[derive(Debug)]
pub struct LoadedScenario {
    pub spec: ScenarioSpec,
    pub inline_rights: Vec<Right>,
    pub warnings: Vec<String>,
}

fn node_index(file_value: usize, n: usize, path: &str) -> Result<usize, IoError> {
    if file_value == 0 || file_value > n {
        return Err(invalid(
            path,
            format!("node {file_value} out of range 1..={n}"),
        ));
    }
    Ok(file_value - 1)
}

fn cost_from_doc(doc: &CostDoc, path: &str) -> Result<(CostFunction, bool), IoError> {
    let f = match doc {
        CostDoc::Quadratic { a, b, vmin, vmax } => {
            CostFunction::quadratic(*a, *b, *vmin, *vmax).map_err(|e| invalid(path, e))?
        }
        CostDoc::Pwl { segments } => {
            let segs: Vec<Segment> = segments
                .iter()
                .map(|s| Segment {
                    price: s.price,
                    from: s.from,
                    to: s.to,
                })
                .collect();
            CostFunction::piecewise(segs).map_err(|e| invalid(path, e))?
        }
    };
    let zero_marginal = f.has_zero_marginal();
    Ok((f, zero_marginal))
}

fn right_from_doc(
    doc: &RightDoc,
    n: usize,
    num_lines: usize,
    path: &str,
    warnings: &mut Vec<String>,
) -> Result<Right, IoError> {
    let vecp = |profile: &[f64]| DVector::from_column_slice(profile);
    match doc {
        RightDoc::Ftr { from, to, profile } => {
            let i = node_index(*from, n, path)?;
            let j = node_index(*to, n, path)?;
            Ok(Right::Ftr(
                Ftr::new(i, j, vecp(profile)).map_err(|e| invalid(path, e))?,
            ))
        }
        RightDoc::Fgr {
            line,
            direction,
            profile,
        } => {
            if *line == 0 || *line > num_lines {
                return Err(invalid(
                    path,
                    format!("line {line} out of range 1..={num_lines}"),
                ));
            }
            let directed = match direction {
                FlowDirection::Forward => line - 1,
                FlowDirection::Reverse => num_lines + line - 1,
            };
            Ok(Right::Fgr(
                Fgr::new(directed, vecp(profile)).map_err(|e| invalid(path, e))?,
            ))
        }
        RightDoc::Fsr { node, profile } => {
            let i = node_index(*node, n, path)?;
            let fsr = Fsr::new(i, vecp(profile));
            if fsr.energy_imbalance().abs() > 1e-9 {
                warnings.push(format!(
                    "{path}: FSR at node {node} sums to {:.6} MWh; it embeds a forward \
                     energy position on top of the storage hedge",
                    fsr.energy_imbalance()
                ));
            }
            Ok(Right::Fsr(fsr))
        }
        RightDoc::Ecr { node, profile } => {
            let i = node_index(*node, n, path)?;
            Ok(Right::Ecr(
                Ecr::new(i, vecp(profile)).map_err(|e| invalid(path, e))?,
            ))
        }
    }
}

/// Validates a scenario document into a solvable specification.
pub fn scenario_from_doc(doc: &ScenarioDoc) -> Result<LoadedScenario, IoError> {
    let n = doc.n;
    let mut warnings = Vec::new();

    let mut lines = Vec::with_capacity(doc.lines.len());
    for (idx, line) in doc.lines.iter().enumerate() {
        let path = format!("lines[{idx}]");
        let from = node_index(line.from, n, &path)?;
        let to = node_index(line.to, n, &path)?;
        if line.reactance <= 0.0 {
            return Err(invalid(&path, "reactance must be positive"));
        }
        if line.capacity < 0.0 {
            return Err(invalid(&path, "capacity must be nonnegative"));
        }
        if let Some(rev) = line.capacity_reverse {
            if rev < 0.0 {
                return Err(invalid(&path, "capacity_reverse must be nonnegative"));
            }
        }
        lines.push(Line {
            from_node: from,
            to_node: to,
            reactance: line.reactance,
            capacity: line.capacity,
            capacity_reverse: line.capacity_reverse,
        });
    }

    if doc.costs.len() != n {
        return Err(invalid(
            "costs",
            format!("expected {n} node entries, found {}", doc.costs.len()),
        ));
    }
    let mut table = Vec::with_capacity(n);
    for (i, per_node) in doc.costs.iter().enumerate() {
        if per_node.len() != doc.horizon {
            return Err(invalid(
                format!("costs[{i}]"),
                format!(
                    "expected {} period entries, found {}",
                    doc.horizon,
                    per_node.len()
                ),
            ));
        }
        let mut row = Vec::with_capacity(doc.horizon);
        for (k, cost_doc) in per_node.iter().enumerate() {
            let path = format!("costs[{i}][{k}]");
            let (f, zero_marginal) = cost_from_doc(cost_doc, &path)?;
            if zero_marginal {
                warnings.push(format!("{path}: curve has a zero marginal price block"));
            }
            row.push(f);
        }
        table.push(row);
    }
    let costs = CostSchedule::new(table).map_err(|e| invalid("costs", e))?;

    if doc.storage.len() != n {
        return Err(invalid(
            "storage",
            format!("expected {n} entries, found {}", doc.storage.len()),
        ));
    }
    let storage = StorageFleet::new(DVector::from_column_slice(&doc.storage))
        .map_err(|e| invalid("storage", e))?;

    let reference_bus = match doc.reference_bus {
        Some(value) => node_index(value, n, "reference_bus")?,
        None => 0,
    };
    let period_hours = doc.period_hours.unwrap_or(1.0);

    let spec = ScenarioSpec::new(
        n,
        doc.horizon,
        lines,
        costs,
        storage,
        reference_bus,
        period_hours,
    )
    .map_err(|e| invalid("scenario", e))?;

    let mut inline_rights = Vec::new();
    if let Some(right_docs) = &doc.rights {
        for (idx, rd) in right_docs.iter().enumerate() {
            let path = format!("rights[{idx}]");
            inline_rights.push(right_from_doc(
                rd,
                n,
                doc.lines.len(),
                &path,
                &mut warnings,
            )?);
        }
    }

    Ok(LoadedScenario {
        spec,
        inline_rights,
        warnings,
    })
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<LoadedScenario, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let doc: ScenarioDoc = serde_json::from_str(&text)?;
    scenario_from_doc(&doc)
}

/// Validates a portfolio document against a market's dimensions.
pub fn rights_from_doc(
    doc: &PortfolioDoc,
    n: usize,
    num_lines: usize,
) -> Result<(Vec<Right>, Vec<String>), IoError> {
    let mut warnings = Vec::new();
    let mut rights = Vec::with_capacity(doc.rights.len());
    for (idx, rd) in doc.rights.iter().enumerate() {
        let path = format!("rights[{idx}]");
        rights.push(right_from_doc(rd, n, num_lines, &path, &mut warnings)?);
    }
    Ok((rights, warnings))
}

pub fn load_portfolio(
    path: impl AsRef<Path>,
    n: usize,
    num_lines: usize,
) -> Result<(Vec<Right>, Vec<String>), IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let doc: PortfolioDoc = serde_json::from_str(&text)?;
    rights_from_doc(&doc, n, num_lines)
}

pub fn contract_from_doc(doc: &ContractDoc, n: usize) -> Result<BilateralContract, IoError> {
    let supplier = node_index(doc.supplier_node, n, "supplier_node")?;
    let demander = node_index(doc.demander_node, n, "demander_node")?;
    BilateralContract::new(
        supplier,
        demander,
        DVector::from_column_slice(&doc.q_i),
        DVector::from_column_slice(&doc.q_j),
        doc.lambda_c,
    )
    .map_err(|e| invalid("contract", e))
}

pub fn load_contract(path: impl AsRef<Path>, n: usize) -> Result<BilateralContract, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let doc: ContractDoc = serde_json::from_str(&text)?;
    contract_from_doc(&doc, n)
}

/// Serializes a scenario back into its document form (used by the
/// corpus generator; node indices become 1-based again).
pub fn scenario_to_doc(spec: &ScenarioSpec) -> ScenarioDoc {
    let lines = spec
        .lines()
        .iter()
        .map(|l| LineDoc {
            from: l.from_node + 1,
            to: l.to_node + 1,
            reactance: l.reactance,
            capacity: l.capacity,
            capacity_reverse: l.capacity_reverse,
        })
        .collect();
    let costs = (0..spec.num_nodes())
        .map(|i| {
            (0..spec.horizon())
                .map(|k| {
                    let f = spec.costs().at(i, k);
                    match f.kind() {
                        crate::costs::CostKind::Quadratic { a, b } => CostDoc::Quadratic {
                            a: *a,
                            b: *b,
                            vmin: f.v_min(),
                            vmax: f.v_max(),
                        },
                        crate::costs::CostKind::PiecewiseLinear { segments } => CostDoc::Pwl {
                            segments: segments
                                .iter()
                                .map(|s| SegmentDoc {
                                    price: s.price,
                                    from: s.from,
                                    to: s.to,
                                })
                                .collect(),
                        },
                    }
                })
                .collect()
        })
        .collect();
    ScenarioDoc {
        n: spec.num_nodes(),
        horizon: spec.horizon(),
        period_hours: Some(spec.period_hours()),
        reference_bus: Some(spec.reference_bus() + 1),
        lines,
        costs,
        storage: spec.storage().capacities().iter().copied().collect(),
        rights: None,
    }
}

/// Serializes a portfolio into its document form (1-based indices).
pub fn portfolio_to_doc(portfolio: &crate::rights::RightsPortfolio) -> PortfolioDoc {
    let num_lines = portfolio.num_directed_lines() / 2;
    let mut rights = Vec::new();
    for (&(i, j), profile) in &portfolio.ftr {
        rights.push(RightDoc::Ftr {
            from: i + 1,
            to: j + 1,
            profile: profile.iter().copied().collect(),
        });
    }
    for (&l, profile) in &portfolio.fgr {
        let (line, direction) = if l < num_lines {
            (l + 1, FlowDirection::Forward)
        } else {
            (l - num_lines + 1, FlowDirection::Reverse)
        };
        rights.push(RightDoc::Fgr {
            line,
            direction,
            profile: profile.iter().copied().collect(),
        });
    }
    for (&i, profile) in &portfolio.fsr {
        rights.push(RightDoc::Fsr {
            node: i + 1,
            profile: profile.iter().copied().collect(),
        });
    }
    for (&i, profile) in &portfolio.ecr {
        rights.push(RightDoc::Ecr {
            node: i + 1,
            profile: profile.iter().copied().collect(),
        });
    }
    PortfolioDoc { rights }
}

pub fn write_scenario(path: impl AsRef<Path>, spec: &ScenarioSpec) -> Result<(), IoError> {
    let path = path.as_ref();
    let doc = scenario_to_doc(spec);
    let text = serde_json::to_string_pretty(&doc)?;
    fs::write(path, text + "\n").map_err(|source| IoError::Write {
        path: path.display().to_string(),
        source,
    })
}
