use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use num_traits::Zero;
use serde::Serialize;

use stdrate::fdp::{falsify_data, falsify_models, fdp_generate, sizes_from_cov, FdpModel, GenerationMode};
use stdrate::fixtures::{random_dataset, random_weight, rng};
use stdrate::io::{self, load_weight, DataSchema};
use stdrate::nesting::{projection_checks, IDENTITY_TOL};
use stdrate::pipeline::{
    render_diagnostics, run_pipeline, Analysis, AnalysisConfig, DiagnosticRequest, DiagnosticResult, Overrides, Stages,
};
use stdrate::{EmptyStratumPolicy, WeightMeasure};

/// Rate standardization over categorical registry data.
#[derive(Debug, Parser)]
#[command(name = "stdrate", version)]
struct Cli {
    /// Analysis config JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory receiving every emitted file.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Empty-stratum policy, overriding the config: strict, renormalize or zero.
    #[arg(long, global = true)]
    policy: Option<EmptyStratumPolicy>,
    /// Diagnostic or falsification tolerance, overriding the config.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Read every configured dataset and write its count table.
    Ingest,
    /// Emit the configured crude, SCA, SCC and percent-difference series.
    Rates,
    /// Show how SCA and SCC differences behave between two periods.
    Compare {
        /// The two periods to compare; without it the config's demo requests run.
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        periods: Option<Vec<String>>,
        /// Comma-separated E1 covariates of the comparison.
        #[arg(long, value_delimiter = ',')]
        e1: Vec<String>,
    },
    /// Run the configured confounding diagnostics.
    Diagnose,
    /// Check the SCC recursion and projection properties.
    NestCheck {
        /// Check a generated fixture with this seed instead of a config.
        #[arg(long, conflicts_with = "config")]
        seed: Option<u64>,
        /// Covariate count bound of the generated fixture.
        #[arg(long, default_value_t = 5, requires = "seed")]
        max_factors: usize,
        /// Level count bound of the generated fixture.
        #[arg(long, default_value_t = 4, requires = "seed")]
        max_levels: usize,
    },
    /// Generate a synthetic count table from an FDP model.
    FdpGen {
        /// FDP model JSON.
        #[arg(long)]
        model: PathBuf,
        /// Model period to realize.
        #[arg(long)]
        period: String,
        #[arg(long, value_enum, default_value_t = Mode::Expected)]
        mode: Mode,
        /// Seed of the sampling generator; required in sampled mode.
        #[arg(long)]
        seed: Option<u64>,
        /// Individuals in every stratum with positive covariate probability.
        #[arg(long, conflicts_with = "population")]
        per_cell: Option<u64>,
        /// Total individuals, split by the model's covariate distribution.
        #[arg(long)]
        population: Option<u64>,
    },
    /// Compare marginal SCC rates of two periods and report what the
    /// difference says about the unmeasured-factor assumptions.
    FdpFalsify {
        /// FDP model JSON; without it the two config datasets are compared.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Second model for the second period; defaults to `--model`.
        #[arg(long, requires = "model")]
        model_b: Option<PathBuf>,
        /// Model periods to compare.
        #[arg(long, num_args = 2, value_names = ["A", "B"], requires = "model")]
        periods: Option<Vec<String>>,
        /// Weight CSV over the model's covariates; uniform when omitted.
        #[arg(long, requires = "model")]
        weight: Option<PathBuf>,
    },
    /// Run every configured analysis stage.
    Run,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Expected,
    Sampled,
}

fn load_config(cli: &Cli) -> Result<AnalysisConfig> {
    let path = cli.config.as_deref().ok_or_else(|| anyhow!("--config is required for this command"))?;
    Ok(AnalysisConfig::load(path)?)
}

fn overrides(cli: &Cli) -> Overrides {
    Overrides { policy: cli.policy, tol: cli.tol }
}

/// Analysis with the command-line overrides applied.
fn prepare(cli: &Cli) -> Result<Analysis> {
    let mut config = load_config(cli)?;
    if let Some(p) = cli.policy {
        config.policy = p;
    }
    if let Some(t) = cli.tol {
        config.tol = t;
    }
    Ok(Analysis::prepare(config)?)
}

fn run_stages(cli: &Cli, stages: Stages) -> Result<stdrate::pipeline::RunReport> {
    let report = run_pipeline(load_config(cli)?, &cli.out_dir, overrides(cli), stages)?;
    for path in &report.artifacts {
        println!("wrote {}", path.display());
    }
    Ok(report)
}

fn json_text<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    text
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    io::write_text(path, &json_text(value))?;
    Ok(())
}

const NONE: Stages = Stages { ingest: false, series: false, diagnostics: false, nesting: false };

fn compare(cli: &Cli, periods: &Option<Vec<String>>, e1: &[String]) -> Result<()> {
    let analysis = prepare(cli)?;
    let requests: Vec<DiagnosticRequest> = match periods {
        Some(p) => vec![DiagnosticRequest::Demo { periods: [p[0].clone(), p[1].clone()], e1: e1.to_vec() }],
        None => {
            let demos: Vec<_> =
                analysis.config.diagnostics.iter().filter(|r| matches!(r, DiagnosticRequest::Demo { .. })).cloned().collect();
            if demos.is_empty() {
                bail!("no --periods given and the config has no demo diagnostic");
            }
            demos
        }
    };
    let mut results = Vec::new();
    for request in &requests {
        results.push((request.label(), analysis.diagnostic(request)?));
    }
    let demos: Vec<&DiagnosticResult> = results.iter().map(|(_, r)| r).collect();
    let path = cli.out_dir.join("compare.json");
    write_json(&path, &demos)?;
    print!("{}", render_diagnostics(&results));
    for (_, result) in &results {
        if let DiagnosticResult::Demo(d) = result {
            println!("{:<24} {:>12} {:>12} {:>12} {:>12}", "group", "crude diff", "scc diff", "sca diff", "sca dod");
            for row in &d.rows {
                let f = |x: Option<f64>| x.map_or("NA".to_string(), |v| format!("{v:.6}"));
                println!(
                    "{:<24} {:>12} {:>12} {:>12} {:>12}",
                    row.stratum,
                    f(row.crude_diff),
                    f(row.scc_diff),
                    f(row.sca_diff),
                    f(row.sca_diff_of_diffs)
                );
            }
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn nest_check_seeded(cli: &Cli, seed: u64, max_factors: usize, max_levels: usize) -> Result<bool> {
    if !(1..=5).contains(&max_factors) || max_levels < 1 {
        bail!("generated fixtures need 1 to 5 covariates and at least one level");
    }
    let dist = random_dataset(seed, max_factors, max_levels);
    // The weight stream is offset from the data stream so the two differ.
    let weight = random_weight(&mut rng(seed.wrapping_add(1)), dist.schema());
    let mut report = projection_checks(&dist, &weight, cli.tol.unwrap_or(IDENTITY_TOL))?;
    report.seed = Some(seed);
    let path = cli.out_dir.join(format!("nest_check_seed_{seed}.json"));
    write_json(&path, &report)?;
    print!("{}", json_text(&report));
    println!("wrote {}", path.display());
    Ok(report.passed)
}

fn fdp_gen(
    cli: &Cli,
    model_path: &Path,
    period: &str,
    mode: Mode,
    seed: Option<u64>,
    per_cell: Option<u64>,
    population: Option<u64>,
) -> Result<()> {
    let model = FdpModel::from_json(&io::read_text(model_path)?).with_context(|| format!("model {}", model_path.display()))?;
    let mode = match (mode, seed) {
        (Mode::Expected, _) => GenerationMode::Expected,
        (Mode::Sampled, Some(seed)) => GenerationMode::Sampled { seed },
        (Mode::Sampled, None) => bail!("--mode sampled requires --seed"),
    };
    let sizes = match population {
        Some(total) => sizes_from_cov(&model, period, total)?,
        None => {
            let n = per_cell.unwrap_or(1000);
            model.period(period)?.cov_dist.iter().map(|p| if p.is_zero() { 0 } else { n }).collect()
        }
    };
    let generated = fdp_generate(&model, period, &sizes, mode)?;
    let schema = DataSchema { outcome: "outcome".into(), schema: model.schema().clone() };
    let out = &cli.out_dir;
    let mut written = vec![
        (out.join("schema.json"), schema.to_json()),
        (out.join(format!("counts_{period}.csv")), io::write_counts(&generated.joint)),
        (out.join(format!("generation_{period}.json")), json_text(&generated.metadata)),
    ];
    if let Some(expected) = &generated.expected {
        written.push((out.join(format!("expected_{period}.csv")), expected.to_csv(model.schema())));
    }
    for (path, text) in &written {
        io::write_text(path, text)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn fdp_falsify(
    cli: &Cli,
    model: &Option<PathBuf>,
    model_b: &Option<PathBuf>,
    periods: &Option<Vec<String>>,
    weight: &Option<PathBuf>,
) -> Result<()> {
    let verdict = match model {
        Some(path_a) => {
            let load = |p: &Path| -> Result<FdpModel> {
                FdpModel::from_json(&io::read_text(p)?).with_context(|| format!("model {}", p.display()))
            };
            let a = load(path_a)?;
            let b = match model_b {
                Some(p) => load(p)?,
                None => a.clone(),
            };
            let periods = periods.as_ref().ok_or_else(|| anyhow!("model mode requires --periods A B"))?;
            let w = match weight {
                Some(p) => {
                    let schema = DataSchema { outcome: "outcome".into(), schema: a.schema().clone() };
                    load_weight(p, &schema, &[])?
                }
                None => WeightMeasure::uniform(a.schema().clone(), a.schema().all_factors()),
            };
            falsify_models((&a, &periods[0]), (&b, &periods[1]), &w, cli.tol.unwrap_or(0.0))?
        }
        None => {
            let tol = cli.tol.ok_or_else(|| anyhow!("data mode requires an explicit --tol"))?;
            let analysis = prepare(cli)?;
            let [a, b] = analysis.joints.as_slice() else {
                bail!("data mode compares exactly two configured datasets, found {}", analysis.joints.len());
            };
            falsify_data(a, b, &analysis.weight, tol, analysis.policy())?
        }
    };
    let path = cli.out_dir.join("falsify.json");
    write_json(&path, &verdict)?;
    print!("{}", json_text(&verdict));
    println!("wrote {}", path.display());
    Ok(())
}

/// Runs the command; `Ok(false)` means it completed but a check failed.
fn execute(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Ingest => {
            run_stages(cli, Stages { ingest: true, ..NONE })?;
        }
        Command::Rates => {
            run_stages(cli, Stages { series: true, ..NONE })?;
        }
        Command::Compare { periods, e1 } => compare(cli, periods, e1)?,
        Command::Diagnose => {
            let report = run_stages(cli, Stages { diagnostics: true, ..NONE })?;
            print!("{}", render_diagnostics(&report.diagnostics));
        }
        Command::NestCheck { seed: Some(seed), max_factors, max_levels } => {
            return nest_check_seeded(cli, *seed, *max_factors, *max_levels);
        }
        Command::NestCheck { seed: None, .. } => {
            let report = run_stages(cli, Stages { nesting: true, ..NONE })?;
            let passed = report.nesting.iter().all(|n| n.scc_identity_holds) && report.projection.iter().all(|(_, p)| p.passed);
            println!("recursion and projection checks {}", if passed { "passed" } else { "FAILED" });
            return Ok(passed);
        }
        Command::FdpGen { model, period, mode, seed, per_cell, population } => {
            fdp_gen(cli, model, period, *mode, *seed, *per_cell, *population)?
        }
        Command::FdpFalsify { model, model_b, periods, weight } => fdp_falsify(cli, model, model_b, periods, weight)?,
        Command::Run => {
            let report = run_stages(cli, Stages { ingest: true, ..Stages::ANALYSES })?;
            if !report.diagnostics.is_empty() {
                print!("{}", render_diagnostics(&report.diagnostics));
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
