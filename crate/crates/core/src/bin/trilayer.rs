use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use trilayer::sim::{run, ScenarioConfig, SimOutput};
use trilayer::{bench, config, presets, Error};

/// Three-layer DDoS policing simulator.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a named preset (baseline, fig5a, fig5b, fig5c, fig6a, fig6b, fig6c).
    Preset {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override a scenario field by dotted path, e.g. `policer.lambda=0.3`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Only write the expanded scenario files.
        #[arg(long)]
        dry_run: bool,
    },
    /// Measure per-packet policing latency against table size.
    Bench {
        #[arg(long, default_value = "1e6,1e7")]
        sizes: String,
        #[arg(long, default_value_t = bench::MIN_OPS)]
        ops: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    error: Error,
}

impl Failure {
    fn input(error: Error) -> Self {
        Self { code: 2, error }
    }

    fn runtime(error: Error) -> Self {
        let code = match error {
            Error::Validation(_) | Error::UnknownPreset(_) | Error::Parse { .. } | Error::Json(_) => 2,
            _ => 3,
        };
        Self { code, error }
    }
}

type CmdResult = Result<(), Failure>;

fn write(path: &Path, contents: &str) -> CmdResult {
    std::fs::write(path, contents).map_err(|e| {
        Failure::runtime(Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    })
}

fn create_dir(dir: &Path) -> CmdResult {
    std::fs::create_dir_all(dir).map_err(|e| {
        Failure::runtime(Error::Io {
            path: dir.display().to_string(),
            source: e,
        })
    })
}

fn write_outputs(dir: &Path, stem: &str, cfg: &ScenarioConfig, out: &SimOutput) -> CmdResult {
    write(&dir.join(format!("{stem}.scenario.json")), &config::to_json(cfg))?;
    write(&dir.join(format!("{stem}.csv")), &out.series.to_csv())?;
    write(&dir.join(format!("{stem}.summary.json")), &out.summary.to_json())?;
    if let Some(log) = &out.decision_log {
        write(&dir.join(format!("{stem}.decisions.csv")), log)?;
    }
    Ok(())
}

fn cmd_run(path: &Path, out: &Path, seed: Option<u64>) -> CmdResult {
    let mut cfg = config::load_scenario(path).map_err(Failure::input)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let result = run(&cfg).map_err(Failure::runtime)?;
    create_dir(out)?;
    write_outputs(out, &cfg.name, &cfg, &result)?;
    report(&cfg.name, &result);
    Ok(())
}

fn report(label: &str, out: &SimOutput) {
    let s = &out.summary;
    println!(
        "{label}: legit {:.3}/tick/sender, attack share {:.4} of B, utilization {:.3}, activated {}",
        s.legit_per_sender,
        s.attack_share,
        s.utilization,
        s.activated_at.map_or("never".into(), |t| format!("at t={t}")),
    );
}

fn cmd_preset(name: &str, out: Option<PathBuf>, set: &[String], dry_run: bool) -> CmdResult {
    let overrides = set
        .iter()
        .map(|s| config::parse_assignment(s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(Failure::input)?;
    let mut points = presets::expand(name).map_err(Failure::input)?;
    for p in &mut points {
        p.config = config::apply_overrides(&p.config, &overrides).map_err(Failure::input)?;
    }
    let dir = out.unwrap_or_else(|| PathBuf::from("out").join(name));
    create_dir(&dir)?;
    let mut done = Vec::new();
    for p in points {
        if dry_run {
            write(
                &dir.join(format!("{}.scenario.json", p.label)),
                &config::to_json(&p.config),
            )?;
            continue;
        }
        log::info!("running {}", p.label);
        let result = run(&p.config).map_err(Failure::runtime)?;
        write_outputs(&dir, &p.label, &p.config, &result)?;
        report(&p.label, &result);
        done.push((p, result.summary));
    }
    if !dry_run {
        write(&dir.join("sweep_summary.csv"), &presets::sweep_summary_csv(&done))?;
    }
    Ok(())
}

fn cmd_bench(sizes: &str, ops: u64, out: Option<PathBuf>) -> CmdResult {
    let sizes = bench::parse_sizes(sizes).map_err(Failure::input)?;
    let report = bench::run_bench(&sizes, ops, 0).map_err(Failure::runtime)?;
    for p in &report.points {
        println!(
            "size {:>11}: median {:.1} ns/pkt, p99 {:.1} ns/pkt, payload {} B, containers ~{} B",
            p.table_size, p.median_ns, p.p99_ns, p.payload_bytes, p.container_bytes
        );
    }
    for s in &report.skipped {
        println!("size {:>11}: skipped ({})", s.table_size, s.reason);
    }
    println!("bytes per entry: {}", report.bytes_per_entry);
    if let Some(r) = report.size_ratio {
        println!("median ratio largest/smallest: {r:.2}");
    }
    if let Some(dir) = out {
        create_dir(&dir)?;
        write(&dir.join("bench.json"), &report.to_json())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed } => cmd_run(&config, &out, seed),
        Command::Preset {
            name,
            out,
            set,
            dry_run,
        } => cmd_preset(&name, out, &set, dry_run),
        Command::Bench { sizes, ops, out } => cmd_bench(&sizes, ops, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}
