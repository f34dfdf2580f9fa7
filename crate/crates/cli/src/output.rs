//! Report emission: CSV artifacts and stdout summaries.
//!
//! Column conventions: nodes and lines are 1-based, one column per
//! period labeled `p0..p(N-1)`, values printed with 9 decimal places.

use std::fs;
use std::path::Path;

use anyhow::Context;
use nalgebra::DMatrix;

use srk_core::dispatch::{EquilibriumSolution, KktReport, ScenarioSpec};
use srk_core::hedging::{BilateralContract, HedgeLedger};
use srk_core::settlement::SettlementReport;
use srk_core::sft::{InfeasibilityCertificate, MaxRentResult};

/// Fixed-width numeric formatting shared by all emitted values.
pub fn num(value: f64) -> String {
    format!("{value:.9}")
}

fn period_header(label: &str, horizon: usize) -> String {
    let mut header = String::from(label);
    for k in 0..horizon {
        header.push_str(&format!(",p{k}"));
    }
    header.push('\n');
    header
}

/// One CSV row per matrix row, first column taken from `labels`.
fn matrix_csv(label: &str, labels: &[String], matrix: &DMatrix<f64>) -> String {
    let mut text = period_header(label, matrix.ncols());
    for (row, name) in labels.iter().enumerate() {
        text.push_str(name);
        for k in 0..matrix.ncols() {
            text.push(',');
            text.push_str(&num(matrix[(row, k)]));
        }
        text.push('\n');
    }
    text
}

fn node_labels(n: usize) -> Vec<String> {
    (1..=n).map(|i| i.to_string()).collect()
}

fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn write_solution(
    out: &Path,
    spec: &ScenarioSpec,
    sol: &EquilibriumSolution,
    report: &KktReport,
) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let nodes = node_labels(spec.num_nodes());
    write(
        &out.join("injections.csv"),
        &matrix_csv("node", &nodes, &sol.injections),
    )?;
    write(
        &out.join("storage.csv"),
        &matrix_csv("node", &nodes, &sol.extractions),
    )?;
    write(
        &out.join("prices.csv"),
        &matrix_csv("node", &nodes, &sol.prices),
    )?;
    write(
        &out.join("soc_upper_prices.csv"),
        &matrix_csv("node", &nodes, &sol.soc_upper_prices),
    )?;
    write(
        &out.join("soc_lower_prices.csv"),
        &matrix_csv("node", &nodes, &sol.soc_lower_prices),
    )?;

    let m = spec.num_lines();
    let line_labels: Vec<String> = (0..2 * m)
        .map(|l| {
            if l < m {
                format!("{},forward", l + 1)
            } else {
                format!("{},reverse", l - m + 1)
            }
        })
        .collect();
    write(
        &out.join("line_prices.csv"),
        &matrix_csv("line,direction", &line_labels, &sol.line_prices),
    )?;

    let mut gamma = period_header("", sol.system_prices.len());
    gamma = gamma.trim_start_matches(',').to_string();
    gamma.push_str(
        &sol.system_prices
            .iter()
            .map(|v| num(*v))
            .collect::<Vec<_>>()
            .join(","),
    );
    gamma.push('\n');
    write(&out.join("system_prices.csv"), &gamma)?;

    let kkt = format!(
        "stationarity_cost,{}\nstationarity_storage,{}\nprimal_feasibility,{}\n\
         dual_nonnegativity,{}\ncomplementarity,{}\nlambda_consistency,{}\npass,{}\n",
        num(report.stationarity_cost),
        num(report.stationarity_storage),
        num(report.primal_feasibility),
        num(report.dual_nonnegativity),
        num(report.complementarity),
        num(report.lambda_consistency),
        report.pass
    );
    write(&out.join("kkt_report.csv"), &kkt)?;
    Ok(())
}

pub fn write_settlement(out: &Path, report: &SettlementReport) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let nodes = node_labels(report.per_node_payments.nrows());
    write(
        &out.join("payments.csv"),
        &matrix_csv("node", &nodes, &report.per_node_payments),
    )?;
    let summary = format!(
        "ms,{}\ntcs,{}\nscs,{}\ntcs_dual,{}\nscs_dual,{}\ntcs_net_form,{}\n\
         residual_decomposition,{:.3e}\nresidual_tcs_dual,{:.3e}\nresidual_scs_dual,{:.3e}\n",
        num(report.merchandising_surplus),
        num(report.transmission_surplus),
        num(report.storage_surplus),
        num(report.transmission_surplus_dual),
        num(report.storage_surplus_dual),
        num(report.transmission_surplus_net_form),
        report.identity_residuals.decomposition,
        report.identity_residuals.transmission_dual,
        report.identity_residuals.storage_dual,
    );
    write(&out.join("settlement.csv"), &summary)?;
    Ok(())
}

pub fn write_witness(out: &Path, witness: &DMatrix<f64>) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let nodes = node_labels(witness.nrows());
    write(
        &out.join("witness.csv"),
        &matrix_csv("node", &nodes, witness),
    )
}

pub fn print_certificate(certificate: &InfeasibilityCertificate) {
    println!("certificate gap {:.6e}", certificate.gap);
    for (k, weight) in &certificate.balance_weights {
        println!("  balance period {k}: weight {weight:.6}");
    }
    for (k, l, weight) in &certificate.flow_weights {
        println!("  flow period {k} directed line {l}: weight {weight:.6}");
    }
    for (node, k, weight) in &certificate.soc_upper_weights {
        println!("  soc upper node {node} period {k}: weight {weight:.6}");
    }
    for (node, k, weight) in &certificate.soc_lower_weights {
        println!("  soc lower node {node} period {k}: weight {weight:.6}");
    }
}

pub fn write_max_rent(
    out: &Path,
    result: &MaxRentResult,
    transmission_only: bool,
) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let doc = srk_core::io::portfolio_to_doc(&result.portfolio);
    let text = serde_json::to_string_pretty(&doc).context("serializing portfolio")?;
    write(&out.join("max_rent_portfolio.json"), &(text + "\n"))?;
    write(
        &out.join("witness.csv"),
        &matrix_csv(
            "node",
            &node_labels(result.witness.nrows()),
            &result.witness,
        ),
    )?;
    let summary = format!(
        "mode,{}\nrent,{}\ntarget,{}\ngap,{:.6e}\n",
        if transmission_only {
            "transmission_only"
        } else {
            "combined"
        },
        num(result.rent),
        num(result.target),
        result.gap,
    );
    write(&out.join("max_rent.csv"), &summary)?;
    Ok(())
}

pub fn write_ledger(
    out: &Path,
    ledger: &HedgeLedger,
    contract: &BilateralContract,
) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut text = String::from("instrument,supplier,demander\n");
    for row in &ledger.rows {
        text.push_str(&format!(
            "{},{},{}\n",
            row.instrument,
            num(row.supplier),
            num(row.demander)
        ));
    }
    text.push_str(&format!(
        "total,{},{}\n",
        num(ledger.supplier_total),
        num(ledger.demander_total)
    ));
    text.push_str(&format!(
        "hedge_residual,{:.3e},\n",
        ledger.hedge_residual(contract)
    ));
    write(&out.join("ledger.csv"), &text)
}
