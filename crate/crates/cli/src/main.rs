use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use attune_core::harness::output::{all_comparisons, comparisons_csv, svg_plot};
use attune_core::harness::{
    aggregate, compare, emit_outputs, grid_cells, read_records, run_grid, write_record, ExperimentConfig,
    RunRecord, Summary,
};
use attune_core::session::Algorithm;

/// Learned robot-to-human signaling interfaces: experiment grids and a
/// live session service.
#[derive(Parser)]
#[command(name = "attune", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an (algorithm × seed) grid against simulated humans, then
    /// aggregate it.
    Run {
        /// TOML or JSON experiment file. Missing keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// 3 seeds × 300 interactions (configurable under `[quick]`).
        #[arg(long)]
        quick: bool,
        /// Comma-separated seeds, replacing the configured ones.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Output root. Takes precedence over ATTUNE_OUT and `out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads. Defaults to the available cores.
        #[arg(long)]
        jobs: Option<usize>,
        /// Re-run cells even when a complete record with the same config
        /// hash already exists.
        #[arg(long)]
        force: bool,
    },
    /// Rebuild summary CSVs, comparisons and plots from saved runs.
    Aggregate {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// One-sided rank-sum test: is `a` lower than `b`?
    Compare {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
    },
    /// Write one SVG per environment from saved runs.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Print a complete experiment file with every default filled in.
    Config {
        #[arg(long, value_enum, default_value_t = Preset::Treasure)]
        preset: Preset,
        #[arg(long)]
        json: bool,
    },
    /// Serve live sessions over HTTP.
    Serve {
        #[arg(long, default_value_t = attune_server::DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Treasure,
    Highway,
}

const CONFIG_FILE: &str = "config.toml";

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = dispatch(Cli::parse().command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run {
            config,
            quick,
            seeds,
            out,
            jobs,
            force,
        } => {
            let mut cfg = match &config {
                Some(p) => ExperimentConfig::load(p)?,
                None => ExperimentConfig::default(),
            };
            if quick {
                cfg = cfg.quick();
            }
            if let Some(seeds) = seeds {
                cfg.seeds = seeds;
            }
            cfg.validate()?;
            let root = out.unwrap_or_else(|| cfg.output_root());
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            run(&cfg, &root, jobs, force)
        }
        Command::Aggregate { input } => {
            let (records, summary) = load(&input)?;
            let files = emit_outputs(&summary, &records, &input)?;
            print_summary(&summary);
            println!("wrote {} summaries, {}", files.cells.len(), files.comparisons.display());
            Ok(())
        }
        Command::Compare { input, a, b } => {
            let (_, summary) = load(&input)?;
            let (a, b) = (Algorithm::parse(&a)?, Algorithm::parse(&b)?);
            for c in compare(&summary, a, b)? {
                println!(
                    "{}: {} {:.4} vs {} {:.4}  U = {}  p = {:.4}",
                    c.env, c.a, c.a_mean, c.b, c.b_mean, c.u, c.p
                );
            }
            Ok(())
        }
        Command::Plot { input } => {
            let (_, summary) = load(&input)?;
            for env in summary.envs() {
                let path = input.join(format!("{env}.svg"));
                std::fs::write(&path, svg_plot(&summary, &env)).with_context(|| path.display().to_string())?;
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Config { preset, json } => {
            let cfg = match preset {
                Preset::Treasure => ExperimentConfig::default(),
                Preset::Highway => ExperimentConfig::highway(),
            };
            print!("{}", if json { cfg.to_json()? + "\n" } else { cfg.to_toml()? });
            Ok(())
        }
        Command::Serve { port, bind } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(attune_server::serve(SocketAddr::new(bind, port)))?;
            Ok(())
        }
    }
}

fn existing(root: &Path, cfg: &ExperimentConfig, hash: &str) -> Vec<RunRecord> {
    let Ok(records) = read_records(root) else {
        return Vec::new();
    };
    records
        .into_iter()
        .filter(|r| r.env == cfg.env.label() && r.config_hash == hash && r.is_complete(cfg.interactions))
        .collect()
}

fn run(cfg: &ExperimentConfig, root: &Path, jobs: usize, force: bool) -> Result<()> {
    std::fs::create_dir_all(root).with_context(|| root.display().to_string())?;
    std::fs::write(root.join(CONFIG_FILE), cfg.to_toml()?).context("writing config")?;
    let hash = cfg.hash()?;
    let done = if force { Vec::new() } else { existing(root, cfg, &hash) };
    let cells = grid_cells(cfg);
    let todo: Vec<_> = cells
        .iter()
        .copied()
        .filter(|&(a, s)| !done.iter().any(|r| r.algorithm == a && r.seed == s))
        .collect();
    log::info!(
        "{}: {} runs ({} already complete), {} interactions each, {jobs} jobs",
        cfg.env.label(),
        cells.len(),
        cells.len() - todo.len(),
        cfg.interactions
    );
    let fresh = run_grid(cfg, &todo, jobs, &|r| {
        write_record(root, r)?;
        log::info!("{} seed {} done in {:.1}s", r.algorithm, r.seed, r.wall_clock_secs);
        Ok(())
    })?;
    let mut records: Vec<RunRecord> = done
        .into_iter()
        .filter(|r| cells.contains(&(r.algorithm, r.seed)))
        .chain(fresh)
        .collect();
    records.sort_by_key(|r| (r.algorithm, r.seed));
    let failed = records.iter().filter(|r| r.failure.is_some()).count();
    let summary = aggregate(&records, cfg.last_window, cfg.smoothing_window)?;
    emit_outputs(&summary, &records, root)?;
    print_summary(&summary);
    print!("{}", comparisons_csv(&all_comparisons(&summary)));
    if failed > 0 {
        bail!("{failed} run(s) aborted; see metadata.json");
    }
    Ok(())
}

/// Saved records under `dir`, aggregated with the windows of the saved
/// config when there is one.
fn load(dir: &Path) -> Result<(Vec<RunRecord>, Summary)> {
    let records = read_records(dir)?;
    if records.is_empty() {
        bail!("no run records under {}", dir.join("runs").display());
    }
    let cfg_path = dir.join(CONFIG_FILE);
    let cfg = if cfg_path.exists() {
        ExperimentConfig::load(&cfg_path)?
    } else {
        ExperimentConfig::default()
    };
    let last = cfg.last_window.min(records.iter().map(|r| r.metrics.len()).max().unwrap_or(1).max(1));
    let summary = aggregate(&records, last, cfg.smoothing_window)?;
    Ok((records, summary))
}

fn print_summary(summary: &Summary) {
    println!("env,algorithm,seeds,failures,last_{}_mean", summary.last_window);
    for c in &summary.cells {
        println!(
            "{},{},{},{},{:.4}",
            c.env, c.algorithm, c.seeds.len(), c.failures, c.last_window_mean
        );
    }
}
