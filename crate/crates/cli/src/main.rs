//! `srk`: solve dispatch scenarios, settle the surplus, test rights
//! portfolios for simultaneous feasibility, and synthesize hedges.
//!
//! Exit codes: 0 success, 1 infeasible or inadequate verdict, 2 parse
//! or validation error, 3 solver failure.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use srk_core::dispatch::{solve_dispatch, verify_kkt, DispatchError};
use srk_core::io::{self, IoError};
use srk_core::rights::aggregate;
use srk_core::sft::{max_rent, revenue_adequacy_audit, sft_check, SftError, SftVerdict};
use srk_core::{corpus, hedging, settlement};

#[derive(Parser)]
#[command(
    name = "srk",
    about = "Economic dispatch with storage, nodal pricing, and financial rights settlement",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Verification tolerance; overrides SRK_TOL.
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and emit the dispatch, prices, and duals.
    Dispatch {
        scenario: PathBuf,
        /// Output directory for the CSV artifacts.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Solve and settle: merchandising surplus and its decomposition.
    Settle {
        scenario: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Test a rights portfolio for simultaneous feasibility.
    SftCheck {
        scenario: PathBuf,
        portfolio: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Maximize rent over simultaneously feasible portfolios.
    MaxRent {
        scenario: PathBuf,
        /// Restrict to transmission rights (FTR/FGR only).
        #[arg(long)]
        transmission_only: bool,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Synthesize and settle the CFD + FTR + FSR hedge of a contract.
    Hedge {
        scenario: PathBuf,
        contract: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Audit a portfolio's revenue adequacy against the surplus.
    Audit {
        scenario: PathBuf,
        portfolio: PathBuf,
    },
    /// Generate a deterministic batch of random scenarios.
    Corpus {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Process-level outcome distinct from hard errors.
enum Outcome {
    Success,
    NegativeVerdict,
}

fn tolerance(cli: &Cli) -> f64 {
    cli.tol
        .or_else(|| {
            std::env::var("SRK_TOL")
                .ok()
                .and_then(|raw| raw.parse().ok())
        })
        .unwrap_or(1e-6)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let tol = tolerance(&cli);
    if tol <= 0.0 {
        eprintln!("error: tolerance must be positive, got {tol}");
        return ExitCode::from(2);
    }
    match run(&cli, tol) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::NegativeVerdict) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify_error(&err))
        }
    }
}

fn classify_error(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(io_err) = cause.downcast_ref::<IoError>() {
            return match io_err {
                IoError::Read { .. } | IoError::Parse(_) | IoError::Validation { .. } => 2,
                IoError::Write { .. } => 3,
            };
        }
        if let Some(dispatch_err) = cause.downcast_ref::<DispatchError>() {
            return match dispatch_err {
                DispatchError::SolverFailure { .. } | DispatchError::InfeasibleScenario(_) => 3,
                _ => 2,
            };
        }
        if let Some(sft_err) = cause.downcast_ref::<SftError>() {
            return match sft_err {
                SftError::SolverFailure { .. } => 3,
                SftError::NotSimultaneouslyFeasible => 1,
                _ => 2,
            };
        }
        if cause
            .downcast_ref::<srk_core::rights::RightsError>()
            .is_some()
        {
            return 2;
        }
        if cause
            .downcast_ref::<srk_core::hedging::HedgeError>()
            .is_some()
        {
            return 2;
        }
        if cause
            .downcast_ref::<settlement::SettlementError>()
            .is_some()
        {
            return 3;
        }
    }
    3
}

fn load_scenario(path: &Path) -> anyhow::Result<io::LoadedScenario> {
    let loaded = io::load_scenario(path).with_context(|| format!("loading {}", path.display()))?;
    for warning in &loaded.warnings {
        eprintln!("warning: {warning}");
    }
    Ok(loaded)
}

fn run(cli: &Cli, tol: f64) -> anyhow::Result<Outcome> {
    match &cli.command {
        Command::Dispatch { scenario, out } => {
            let loaded = load_scenario(scenario)?;
            let sol = solve_dispatch(&loaded.spec)?;
            let report = verify_kkt(&loaded.spec, &sol, tol);
            if !report.pass {
                anyhow::bail!(DispatchError::SolverFailure {
                    residual: report.max_residual(),
                });
            }
            output::write_solution(out, &loaded.spec, &sol, &report)?;
            println!("objective {}", output::num(sol.objective));
            println!("kkt max residual {:.3e} (pass)", report.max_residual());
            println!("artifacts in {}", out.display());
            Ok(Outcome::Success)
        }
        Command::Settle { scenario, out } => {
            let loaded = load_scenario(scenario)?;
            let sol = solve_dispatch(&loaded.spec)?;
            let report = settlement::settle(&loaded.spec, &sol)?;
            output::write_settlement(out, &report)?;
            println!("ms {}", output::num(report.merchandising_surplus));
            println!("tcs {}", output::num(report.transmission_surplus));
            println!("scs {}", output::num(report.storage_surplus));
            println!("artifacts in {}", out.display());
            Ok(Outcome::Success)
        }
        Command::SftCheck {
            scenario,
            portfolio,
            out,
        } => {
            let loaded = load_scenario(scenario)?;
            let spec = &loaded.spec;
            let (rights, warnings) =
                io::load_portfolio(portfolio, spec.num_nodes(), spec.num_lines())?;
            for warning in &warnings {
                eprintln!("warning: {warning}");
            }
            let p = aggregate(
                rights,
                spec.num_nodes(),
                2 * spec.num_lines(),
                spec.horizon(),
            )?;
            let verdict = sft_check(&p, spec.polytope(), spec.storage(), tol)?;
            match verdict {
                SftVerdict::Feasible {
                    witness,
                    binding_constraints,
                } => {
                    output::write_witness(out, &witness)?;
                    println!("feasible");
                    println!("binding constraints: {}", binding_constraints.len());
                    println!("witness in {}", out.display());
                    Ok(Outcome::Success)
                }
                SftVerdict::Infeasible { certificate } => {
                    println!("infeasible");
                    output::print_certificate(&certificate);
                    Ok(Outcome::NegativeVerdict)
                }
            }
        }
        Command::MaxRent {
            scenario,
            transmission_only,
            out,
        } => {
            let loaded = load_scenario(scenario)?;
            let spec = &loaded.spec;
            let sol = solve_dispatch(spec)?;
            let report = settlement::settle(spec, &sol)?;
            let result = max_rent(
                &sol,
                spec.polytope(),
                spec.storage(),
                &report,
                *transmission_only,
            )?;
            output::write_max_rent(out, &result, *transmission_only)?;
            println!("rent {}", output::num(result.rent));
            println!("target {}", output::num(result.target));
            println!("gap {:.3e}", result.gap);
            println!("portfolio in {}", out.display());
            Ok(Outcome::Success)
        }
        Command::Hedge {
            scenario,
            contract,
            out,
        } => {
            let loaded = load_scenario(scenario)?;
            let spec = &loaded.spec;
            let contract = io::load_contract(contract, spec.num_nodes())?;
            let sol = solve_dispatch(spec)?;
            let package = hedging::synthesize_hedge(&contract)?;
            let exposure = hedging::decompose_exposure(&contract, &sol.prices)?;
            let ledger = hedging::settle_ledger(&package, &contract, &sol.prices)?;
            output::write_ledger(out, &ledger, &contract)?;

            println!("supplier total {}", output::num(ledger.supplier_total));
            println!("demander total {}", output::num(ledger.demander_total));
            println!(
                "transmission congestion charge {}",
                output::num(exposure.transmission_congestion_charge)
            );
            println!(
                "storage congestion charge {}",
                output::num(exposure.storage_congestion_charge)
            );

            // The ledger identity holds at any prices; whether the
            // synthesized rights fit the physical system is a separate
            // question, reported without affecting the settlement.
            let mut rights = vec![srk_core::rights::Right::Ftr(package.ftr.clone())];
            if package.fsr.profile.amax() > 0.0 {
                rights.push(srk_core::rights::Right::Fsr(package.fsr.clone()));
            }
            let p = aggregate(
                rights,
                spec.num_nodes(),
                2 * spec.num_lines(),
                spec.horizon(),
            )?;
            match sft_check(&p, spec.polytope(), spec.storage(), tol)? {
                SftVerdict::Feasible { .. } => {
                    println!("hedge package simultaneously feasible: yes")
                }
                SftVerdict::Infeasible { .. } => {
                    println!("hedge package simultaneously feasible: no")
                }
            }
            println!("ledger in {}", out.display());
            Ok(Outcome::Success)
        }
        Command::Audit {
            scenario,
            portfolio,
        } => {
            let loaded = load_scenario(scenario)?;
            let spec = &loaded.spec;
            let (rights, warnings) =
                io::load_portfolio(portfolio, spec.num_nodes(), spec.num_lines())?;
            for warning in &warnings {
                eprintln!("warning: {warning}");
            }
            let p = aggregate(
                rights,
                spec.num_nodes(),
                2 * spec.num_lines(),
                spec.horizon(),
            )?;
            let sol = solve_dispatch(spec)?;
            let report = settlement::settle(spec, &sol)?;
            let audit =
                revenue_adequacy_audit(&p, &sol, &report, spec.polytope(), spec.storage(), tol)?;
            println!("rent total {}", output::num(audit.rents.total()));
            println!(
                "transmission rent {}",
                output::num(audit.rents.transmission_total)
            );
            println!("storage rent {}", output::num(audit.rents.storage_total));
            println!("ms {}", output::num(audit.merchandising_surplus));
            println!("retained {}", output::num(audit.retained));
            if audit.adequate {
                println!("revenue adequacy: pass");
                Ok(Outcome::Success)
            } else {
                println!("revenue adequacy: FAIL");
                Ok(Outcome::NegativeVerdict)
            }
        }
        Command::Corpus { seed, count, out } => {
            std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            for index in 0..*count {
                let scenario = corpus::random_scenario(seed.wrapping_add(index as u64));
                let path = out.join(format!("scenario_{index:04}.json"));
                io::write_scenario(&path, &scenario)?;
            }
            println!("wrote {count} scenarios to {}", out.display());
            Ok(Outcome::Success)
        }
    }
}
