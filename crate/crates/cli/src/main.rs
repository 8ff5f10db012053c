mod artifact;
mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use artifact::{Manifest, Output};
use config::RunConfig;

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Io(String),
    Core(gravdec::Error),
    Mismatch(String),
}

impl From<gravdec::Error> for Failure {
    fn from(e: gravdec::Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        use gravdec::Error as E;
        match self {
            Failure::Config(_) => 2,
            Failure::Core(E::Config(_) | E::Domain(_)) => 2,
            Failure::Core(E::OutOfRange(_)) => 4,
            Failure::Core(_) | Failure::Io(_) | Failure::Mismatch(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Mismatch(m) => write!(f, "rerun mismatch: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "gravdec", version, about = "Gravity-induced decoherence experiments")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set bound_mc.n_realizations=200.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Parent directory for run artifacts [env: GRAVDEC_OUT, default: runs].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run directory name; defaults to the command and a config hash.
    #[arg(long, global = true)]
    name: Option<String>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0, global = true)]
    workers: usize,
    /// Skip SVG plots.
    #[arg(long, global = true)]
    no_plots: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo worldline-length uncertainty ladder.
    BoundMc,
    /// Localization lengths, transition point and scaling surveys.
    Localize,
    /// Analytic and empirical K-model correlations.
    Correlation,
    /// Markovian and memory density-matrix evolutions.
    Master,
    /// Power-family constraint check.
    Family,
    /// Print the resolved configuration.
    ShowConfig,
    /// Repeat the run described by a manifest and compare its tables.
    Rerun { manifest: PathBuf },
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::BoundMc => "bound-mc",
        Command::Localize => "localize",
        Command::Correlation => "correlation",
        Command::Master => "master",
        Command::Family => "family",
        Command::ShowConfig => "show-config",
        Command::Rerun { .. } => "rerun",
    }
}

fn dispatch(name: &str, cfg: &RunConfig) -> Result<Output, Failure> {
    match name {
        "bound-mc" => commands::bound_mc(cfg),
        "localize" => commands::localize(cfg),
        "correlation" => commands::correlation(cfg),
        "master" => commands::master(cfg),
        "family" => commands::family(cfg),
        other => Err(Failure::Config(format!("manifest names unknown command '{other}'"))),
    }
}

fn out_dir(cli: &Cli, fallback: Option<PathBuf>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os("GRAVDEC_OUT").map(PathBuf::from))
        .or(fallback)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn execute(
    cli: &Cli,
    command: &str,
    cfg: RunConfig,
    name: Option<String>,
    parent: PathBuf,
) -> Result<(PathBuf, Manifest), Failure> {
    let start = Instant::now();
    let mut out = dispatch(command, &cfg)?;
    if cli.no_plots {
        out.plots.clear();
    }
    let tables = out.tables.iter().map(|(f, csv)| (f.clone(), artifact::sha256_hex(csv.as_bytes()))).collect();
    let hash = artifact::sha256_hex(config::to_toml(&cfg).as_bytes());
    let manifest = Manifest {
        schema_version: config::SCHEMA_VERSION,
        command: command.to_string(),
        tool: env!("CARGO_PKG_NAME").to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: cfg.master_seed,
        workers: rayon::current_num_threads(),
        wall_time_s: start.elapsed().as_secs_f64(),
        config: cfg,
        tables,
    };
    let name = name.unwrap_or_else(|| format!("{command}-{}", &hash[..12]));
    let dir = artifact::write(&parent, &name, &manifest, &out)?;
    Ok((dir, manifest))
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if cli.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
            .map_err(|e| Failure::Config(format!("cannot size the worker pool: {e}")))?;
    }
    match &cli.command {
        Command::ShowConfig => {
            let cfg = config::resolve(cli.config.as_deref(), &cli.overrides)?;
            print!("{}", config::to_toml(&cfg));
            Ok(())
        }
        Command::Rerun { manifest } => {
            let old = artifact::read_manifest(manifest)?;
            if !cli.overrides.is_empty() || cli.config.is_some() {
                return Err(Failure::Config("rerun takes its configuration from the manifest only".into()));
            }
            // reruns land next to the original unless told otherwise
            let run_dir = if manifest.is_dir() { Some(manifest.clone()) } else { manifest.parent().map(PathBuf::from) };
            let name = cli.name.clone().or_else(|| Some(format!("{}-rerun", run_dir.as_ref()?.file_name()?.to_string_lossy())));
            let parent = out_dir(cli, run_dir.and_then(|d| d.parent().map(PathBuf::from)));
            let (dir, new) = execute(cli, &old.command, old.config.clone(), name, parent)?;
            println!("{}", dir.display());
            if new.tables != old.tables {
                let bad: Vec<&String> =
                    old.tables.iter().filter(|(f, h)| new.tables.get(*f) != Some(h)).map(|(f, _)| f).collect();
                return Err(Failure::Mismatch(format!("tables differ: {bad:?}")));
            }
            println!("all {} tables reproduced bit-identically", new.tables.len());
            Ok(())
        }
        c => {
            let cfg = config::resolve(cli.config.as_deref(), &cli.overrides)?;
            let (dir, _) = execute(cli, command_name(c), cfg, cli.name.clone(), out_dir(cli, None))?;
            println!("{}", dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gravdec: {e}");
            ExitCode::from(e.code())
        }
    }
}
