use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use metamorph_cli::experiments::{output_dir, run};
use metamorph_cli::sweep::{sweep, SweepParam};
use metamorph_cli::{catalog, schema, CliError, ExperimentConfig, OUTPUT_ROOT_VAR};

#[derive(Parser)]
#[command(name = "metamorph", version, about = "Run metamorphosis experiments from TOML configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run { config: PathBuf },
    /// List experiment kinds, or print the default config of one kind.
    List { kind: Option<String> },
    /// Run a config over the cartesian product of parameter values.
    Sweep {
        config: PathBuf,
        /// `key=v1,v2,…`; bare keys refer to the kind's table, `table.key`
        /// to any other table. Repeatable.
        #[arg(long = "param", required = true)]
        params: Vec<String>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::List { kind: None } => {
            for (k, _) in catalog() {
                println!("{:<16} {}", k.name(), k.describe());
            }
            Ok(0)
        }
        Command::List { kind: Some(name) } => {
            print!("{}", schema(&name)?);
            Ok(0)
        }
        Command::Run { config } => {
            let c = ExperimentConfig::load(&config)?;
            let out = output_dir(&c, &output_root());
            let manifest = run(&c, &base_dir(&config), &out)?;
            println!("{}", out.join("manifest.json").display());
            println!("{}", serde_json::to_string_pretty(&manifest.summary).expect("summaries serialize"));
            Ok(0)
        }
        Command::Sweep { config, params, jobs } => {
            let params = params
                .iter()
                .map(|p| p.parse::<SweepParam>())
                .collect::<Result<Vec<_>, _>>()?;
            let text = std::fs::read_to_string(&config).map_err(|e| CliError::io(&config, e))?;
            let (path, points) = sweep(&text, &base_dir(&config), &output_root(), &params, jobs)?;
            let mut code = 0;
            for p in &points {
                let label: Vec<String> = p.overrides.iter().map(|(k, v)| format!("{k}={v}")).collect();
                match &p.error {
                    None => println!("ok   {}", label.join(" ")),
                    Some(e) => println!("fail {} ({e})", label.join(" ")),
                }
                code = code.max(p.exit_code);
            }
            println!("{}", path.display());
            Ok(code)
        }
    }
}

fn main() -> ExitCode {
    let code = match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
