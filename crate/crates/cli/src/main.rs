//! `crb` — compression-sweep experiments and one-shot bound reports for
//! compressed low-rank signal models.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use lowrank_crb::experiment::{self, ExperimentConfig};
use lowrank_crb::fim;
use lowrank_crb::oracle;
use lowrank_crb::singularity;

#[derive(Parser)]
#[command(
    name = "crb",
    version,
    about = "Cramér-Rao bounds for compressed low-rank signal models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the N_y compression sweep and write sweep.csv, crb_vs_ny.svg,
    /// and manifest.json
    Sweep {
        /// JSON experiment config; bundled demonstration scenario if omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (overrides the config's out_dir)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the measurement-matrix seed
        #[arg(long)]
        seed_phi: Option<u64>,
        /// Override the source-amplitude seed
        #[arg(long)]
        seed_sources: Option<u64>,
    },
    /// One-shot CRB report (JSON to stdout) at a single N_y
    Crb {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Compressed sample count; first ny_range entry if omitted
        #[arg(long)]
        ny: Option<usize>,
    },
    /// Run the oracle suite: Monte-Carlo FIM, finite-difference score and
    /// family checks, and three-path CRB agreement
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        ny: Option<usize>,
        /// Monte-Carlo trial count for the empirical FIM
        #[arg(long, default_value_t = 200_000)]
        trials: usize,
        /// Master seed for the Monte-Carlo trial streams
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Singularity classification (JSON to stdout) at a single N_y
    Classify {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        ny: Option<usize>,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    let config = match path {
        Some(p) => ExperimentConfig::from_json_file(p)
            .with_context(|| format!("reading config {}", p.display()))?,
        None => ExperimentConfig::default_scenario(),
    };
    for warning in config.validate().context("validating config")? {
        eprintln!("warning: {warning}");
    }
    Ok(config)
}

fn pick_ny(config: &ExperimentConfig, ny: Option<usize>) -> usize {
    ny.or_else(|| config.ny_range.first().copied())
        .unwrap_or(config.n_elements)
}

fn run_sweep(
    config: &Option<PathBuf>,
    out: &Option<PathBuf>,
    seed_phi: Option<u64>,
    seed_sources: Option<u64>,
) -> Result<()> {
    let mut config = load_config(config)?;
    if let Some(out) = out {
        config.out_dir = out.clone();
    }
    if let Some(seed) = seed_phi {
        config.seed_phi = seed;
    }
    if let Some(seed) = seed_sources {
        config.seed_sources = seed;
    }
    let rows = experiment::run_sweep(&config)?;
    let finite = rows.iter().filter(|r| r.crb_db.is_some()).count();
    let files = experiment::emit_outputs(&rows, &config)?;
    println!(
        "swept {} N_y values ({} finite, {} singular)",
        rows.len(),
        finite,
        rows.len() - finite
    );
    println!("wrote {}", files.csv.display());
    println!("wrote {}", files.plot.display());
    println!("wrote {}", files.manifest.display());
    Ok(())
}

fn run_crb(config: &Option<PathBuf>, ny: Option<usize>) -> Result<()> {
    let config = load_config(config)?;
    let n_y = pick_ny(&config, ny);
    let model = experiment::build_model_at(&config, n_y)?;
    let verdict = singularity::classify_fim(&model)?;
    let report = fim::crb_report(&model)?;

    let mut out = json!({
        "n_y": n_y,
        "verdict": verdict.kind.to_string(),
        "rank_b": verdict.rank_b,
        "rank_full_fim": verdict.rank_full_fim,
        "fim_min_eigenvalue": verdict.min_eigenvalue,
    });
    match report.crb_omega.bounded() {
        Some(_) => {
            let vars = report.per_param_variance.as_ref().expect("bounded");
            out["crb_omega_diag_rad2"] = json!(vars.as_slice());
            out["crb_omega_diag_db"] =
                json!(vars.iter().map(|v| 10.0 * v.log10()).collect::<Vec<_>>());
            if let Some(traces) = &report.signal_trace_bound {
                out["signal_trace_bound"] = json!(traces.as_slice());
            }
        }
        None => {
            let info = report.crb_omega.singular_info().expect("singular");
            out["singular"] = json!({
                "matrix": info.matrix,
                "dim": info.dim,
                "rank": info.rank,
                "min_singular_value": info.min_singular_value,
            });
        }
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn run_classify(config: &Option<PathBuf>, ny: Option<usize>) -> Result<()> {
    let config = load_config(config)?;
    let n_y = pick_ny(&config, ny);
    let model = experiment::build_model_at(&config, n_y)?;
    let verdict = singularity::classify_fim(&model)?;
    let out = json!({
        "n_y": n_y,
        "kind": verdict.kind.to_string(),
        "rank_b": verdict.rank_b,
        "rank_full_fim": verdict.rank_full_fim,
        "fim_dimension": model.layout().len(),
        "min_eigenvalue": verdict.min_eigenvalue,
        "has_witness": verdict.witness.is_some(),
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn run_verify(
    config: &Option<PathBuf>,
    ny: Option<usize>,
    trials: usize,
    seed: u64,
) -> Result<bool> {
    let config = load_config(config)?;
    let n_y = pick_ny(&config, ny);
    let model = experiment::build_model_at(&config, n_y)?;
    println!(
        "verifying scenario at N_y = {n_y} (K = {}, N = {}, theta dim {})",
        model.n_sources(),
        model.n_snapshots(),
        model.layout().len()
    );
    let mut all_pass = true;

    let family_err = oracle::check_family_derivative(model.family(), model.omega());
    let family_pass = family_err <= lowrank_crb::tolerances::FAMILY_FD_REL_TOL;
    all_pass &= family_pass;
    println!(
        "family derivative vs finite differences: rel err {family_err:.3e} (tol {:.0e}) {}",
        lowrank_crb::tolerances::FAMILY_FD_REL_TOL,
        status(family_pass)
    );

    let score_report = oracle::score_finite_diff_check(&model, seed)?;
    all_pass &= score_report.pass;
    println!(
        "score vs finite differences: rel err {:.3e} (tol {:.0e}) {}",
        score_report.relative_frobenius_error,
        score_report.tolerance,
        status(score_report.pass)
    );

    let (_, mc_report) = oracle::empirical_fim(&model, trials, seed)?;
    all_pass &= mc_report.pass;
    let blocks: Vec<String> = mc_report
        .per_block_errors
        .iter()
        .map(|(name, err)| format!("{name} {err:.3e}"))
        .collect();
    println!(
        "empirical FIM vs analytic ({} trials): rel err {:.3e} [{}] (tol {:.0e}) {}",
        mc_report.trials,
        mc_report.relative_frobenius_error,
        blocks.join(", "),
        mc_report.tolerance,
        status(mc_report.pass)
    );

    match oracle::crb_cross_check(&model) {
        Ok(cross) => {
            all_pass &= cross.pass;
            println!(
                "CRB path agreement (closed form / Schur / full inverse): max rel err {:.3e} (tol {:.0e}) {}",
                cross.relative_frobenius_error,
                cross.tolerance,
                status(cross.pass)
            );
        }
        Err(err) => {
            println!("CRB path agreement: inapplicable ({err})");
        }
    }
    Ok(all_pass)
}

fn status(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Sweep {
            config,
            out,
            seed_phi,
            seed_sources,
        } => run_sweep(config, out, *seed_phi, *seed_sources).map(|()| true),
        Command::Crb { config, ny } => run_crb(config, *ny).map(|()| true),
        Command::Classify { config, ny } => run_classify(config, *ny).map(|()| true),
        Command::Verify {
            config,
            ny,
            trials,
            seed,
        } => run_verify(config, *ny, *trials, *seed),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
