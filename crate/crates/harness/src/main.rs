use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use diamond_core::topology::{ConsensusMatrix, Graph, MatrixKind};
use diamond_harness::config::{parse_config, ConfigError};
use diamond_harness::experiment::{output_root, run_experiment};
use diamond_harness::sweep::{parse_values, sweep};
use diamond_harness::validate::{run_suite, Suite};

const EXIT_VALIDATION: u8 = 2;
const EXIT_USAGE: u8 = 1;

/// Decentralized stochastic bilevel optimization simulator.
///
/// Outputs go to the config's `output`, else `$DIAMOND_OUT`, else `./out`.
#[derive(Parser)]
#[command(name = "diamond", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every algorithm and seed of a config.
    Run { config: PathBuf },
    /// Rerun a config once per value of one key.
    Sweep {
        config: PathBuf,
        /// Dotted config key, e.g. `topology.p_c`.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
    },
    /// Run an acceptance suite: matrices, hypergrad, invariants, convergence or all.
    Validate { suite: String },
    /// Mixing-matrix spectra of an edge-list graph (first line: node count).
    Spectral {
        edgelist: PathBuf,
        /// Pads the graph with isolated nodes up to this count.
        #[arg(long)]
        nodes: Option<usize>,
    },
}

fn load_config(path: &Path) -> Result<diamond_harness::config::ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_config(&text)?)
}

fn spectral(path: &Path, nodes: Option<usize>) -> Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut g = Graph::from_edge_list(&text)?;
    if let Some(n) = nodes {
        if n < g.num_nodes() {
            anyhow::bail!("--nodes {n} is smaller than the {} nodes in the edge list", g.num_nodes());
        }
        g = Graph::new(n, g.edges())?;
    }
    let mut out = serde_json::Map::new();
    out.insert("nodes".into(), g.num_nodes().into());
    out.insert("edges".into(), g.num_edges().into());
    out.insert("connected".into(), g.is_connected().into());
    for kind in [MatrixKind::Metropolis, MatrixKind::Laplacian] {
        let name = if kind == MatrixKind::Metropolis { "metropolis" } else { "laplacian" };
        let value = match ConsensusMatrix::build(kind, &g) {
            Ok(cm) => serde_json::json!({ "lambda": cm.lambda(), "eigenvalues": cm.weights().eigvals()? }),
            Err(e) => serde_json::json!({ "error": e.to_string() }),
        };
        out.insert(name.into(), value);
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Run { config } => {
            let cfg = load_config(&config)?;
            let out = output_root(&cfg);
            let (summary, _) = run_experiment(&cfg, Some(&out))?;
            for (alg, s) in &summary.algorithms {
                println!(
                    "{alg:8} runs={} diverged={} median_final_metric_M={} median_slope={}",
                    s.runs,
                    s.diverged,
                    fmt_opt(s.median_final_metric_m),
                    fmt_opt(s.median_rate_slope)
                );
            }
            println!("ranking: {}", summary.ranking.join(" < "));
            println!("wrote {}", out.join("summary.json").display());
            Ok(0)
        }
        Command::Sweep { config, axis, values } => {
            let cfg = load_config(&config)?;
            let vals = parse_values(&values);
            let out = output_root(&cfg);
            let (rows, _) = sweep(&cfg, &axis, &vals, Some(&out))?;
            println!("{} runs; wrote {}", rows.len(), out.join("sweep.csv").display());
            Ok(0)
        }
        Command::Validate { suite } => {
            let suite: Suite = match suite.parse() {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("{e}");
                    return Ok(EXIT_USAGE);
                }
            };
            let results = run_suite(suite);
            for r in &results {
                println!("{}", serde_json::to_string(r)?);
            }
            Ok(if results.iter().all(|r| r.pass) { 0 } else { EXIT_VALIDATION })
        }
        Command::Spectral { edgelist, nodes } => {
            spectral(&edgelist, nodes)?;
            Ok(0)
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4e}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::from(EXIT_USAGE)
            }
        }
    }
}
