use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use swarmctl_core::harness::{centralized_oracle, compare_schemes, run_scenario, ScenarioConfig, Scheme};
use swarmctl_core::netsim::ExecMode;

#[derive(Parser)]
#[command(name = "swarmctl", version, about = "Cross-layer swarm control simulator")]
struct Cli {
    /// Run rounds on the calling thread only.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write metrics.csv and summary.txt.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scheme in the config.
        #[arg(long)]
        scheme: Option<String>,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare schemes over consecutive seeds starting at the config seed.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "swarm,br,nc")]
        schemes: Vec<String>,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
    /// Exhaustive grid search over a small instance.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 21)]
        grid: usize,
    },
}

fn scheme(id: &str) -> Result<Scheme> {
    match Scheme::from_id(id) {
        Some(s) => Ok(s),
        None => bail!("unknown scheme `{id}` (expected swarm, br or nc)"),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mode = if cli.sequential { ExecMode::Sequential } else { ExecMode::Parallel };
    match cli.command {
        Command::Run { config, out, scheme: s, seed } => {
            let cfg = ScenarioConfig::load(&config)?;
            let s = match s {
                Some(id) => scheme(&id)?,
                None => cfg.scheme,
            };
            let m = run_scenario(&cfg, s, seed.unwrap_or(cfg.seed), mode)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            fs::write(out.join("metrics.csv"), m.to_csv()?)?;
            let summary = m.summary.render();
            fs::write(out.join("summary.txt"), &summary)?;
            print!("{summary}");
        }
        Command::Compare { config, schemes, seeds } => {
            let cfg = ScenarioConfig::load(&config)?;
            let schemes = schemes.iter().map(|s| scheme(s)).collect::<Result<Vec<_>>>()?;
            if seeds == 0 {
                bail!("--seeds must be at least 1");
            }
            let c = compare_schemes(&cfg, &schemes, seeds, mode)?;
            print!("{}", c.render());
        }
        Command::Oracle { config, grid } => {
            let cfg = ScenarioConfig::load(&config)?;
            let o = centralized_oracle(&cfg, grid)?;
            println!("objective = {}", o.objective);
            println!("grid_slack = {}", o.grid_slack);
            println!("evaluated = {}", o.evaluated);
            for ((node, dest), hop) in &o.next_hops {
                println!("next_hop.{}.{} = {}", cfg.nodes[node.index()].name, cfg.nodes[dest.index()].name, cfg.nodes[hop.index()].name);
            }
            for (name, v) in &o.values {
                println!("value.{name} = {v}");
            }
        }
    }
    Ok(())
}
