use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wolfsim::config::{parse_override, Config};
use wolfsim::experiment::{self, Findings};
use wolfsim::sim::WorkloadConfig;
use wolfsim::{model, presets, sim};

#[derive(Parser)]
#[command(name = "wolfsim", version, about = "Flash block-manager simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a config file or a named preset.
    Simulate {
        #[command(flatten)]
        source: Source,
        /// Seed for the workload generator (overrides run.seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for CSV and summary files. Without it summaries go to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the presets, or print one as config text.
    Presets { name: Option<String> },
    /// Write the synthetic trace a configuration describes.
    Trace {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        seed: Option<u64>,
        /// Trace file to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the equilibrium migration fraction and write amplification.
    Model {
        /// LBA/PBA ratios.
        #[arg(required = true)]
        ratios: Vec<f64>,
    },
}

#[derive(Args)]
struct Source {
    /// Config file of `[section]` headers and `key = value` lines.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration; `wolfsim presets` lists them.
    #[arg(long)]
    preset: Option<String>,
    /// Override one key, e.g. `--set wolf.q=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Source {
    fn load(&self, seed: Option<u64>) -> wolfsim::Result<Config> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path)?;
                let mut cfg = Config::parse(&text)?;
                if let WorkloadConfig::Trace { path: trace, .. } = &cfg.run.workload {
                    if trace.is_relative() && !trace.as_os_str().is_empty() {
                        let base = path.parent().unwrap_or(Path::new("."));
                        cfg.set_trace(base.join(trace));
                    }
                }
                cfg
            }
            (None, Some(name)) => presets::preset(name)?,
            (None, None) => unreachable!("clap requires a source"),
        };
        for o in &self.overrides {
            let (k, v) = parse_override(o)?;
            cfg.set(&k, &v)?;
        }
        if let Some(seed) = seed {
            cfg.run.seed = seed;
        }
        Ok(cfg)
    }
}

fn simulate(source: &Source, seed: Option<u64>, out: Option<&Path>) -> wolfsim::Result<()> {
    let cfg = source.load(seed)?;
    let result = experiment::run(&cfg, out)?;
    match out {
        Some(dir) => {
            for path in result.write_to(dir)? {
                println!("wrote {}", path.display());
            }
        }
        None => {
            for r in &result.runs {
                println!("[{}]", r.label);
                print!("{}", r.output.summary.render());
            }
        }
    }
    match &result.findings {
        Findings::Runs => {}
        Findings::SwapPairs(rows) => {
            for p in rows {
                println!(
                    "swap {}-{} {}: migrations={} extra/PBA={:.4}",
                    p.a, p.b, p.manager, p.migrations, p.extra_migrations_per_pba
                );
            }
        }
        Findings::Cleaning(c) => println!(
            "migrations after the last swap: greedy={} lru={} (lru {:+.1}%)",
            c.greedy,
            c.lru,
            100.0 * c.lru_excess()
        ),
        Findings::Frequencies(f) => println!(
            "steady-state WA: assumed={:.4} measured={:.4} (assumed {:+.1}%)",
            f.assumed_wa,
            f.measured_wa,
            100.0 * f.gain()
        ),
        Findings::Grid(rows) => {
            for s in wolfsim::grid::summarize(rows) {
                println!(
                    "groups={} r={:.2} Q={}: mean {:.3}% max {:.3}% over {} configs",
                    s.groups, s.ratio, s.q, s.mean_pct_off, s.max_pct_off, s.configs
                );
            }
        }
    }
    Ok(())
}

fn trace(source: &Source, seed: Option<u64>, out: &Path) -> wolfsim::Result<()> {
    let mut cfg = source.load(seed)?;
    cfg.set_trace(out.to_path_buf());
    cfg.validate()?;
    let n = sim::synthesize_trace(&cfg.run, out)?;
    println!("wrote {n} writes to {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { source, seed, out } => simulate(source, *seed, out.as_deref()),
        Command::Presets { name: None } => {
            for name in presets::NAMES {
                println!("{name}");
            }
            Ok(())
        }
        Command::Presets { name: Some(name) } => presets::text(name).map(|t| print!("{}", t.trim_start())),
        Command::Trace { source, seed, out } => trace(source, *seed, out),
        Command::Model { ratios } => ratios.iter().try_for_each(|&r| {
            let p = model::equilibrium(r)?;
            println!("r={r} delta={:.6} wa={:.6}", p.delta, p.wa);
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
