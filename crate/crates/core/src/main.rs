use std::path::PathBuf;
use std::process::ExitCode;

use bloch_beam::config::RunConfig;
use bloch_beam::harness::{run, Command};
use bloch_beam::Error;
use clap::Parser;

#[derive(Debug, Parser)]
#[command(name = "bloch-beam", version, about = "Gaussian-beam quasimodes and magnetic levels of a Bloch band")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the summary (or the error) as JSON.
    #[arg(long)]
    json: bool,
}

fn report(err: &Error, as_json: bool) -> ExitCode {
    let code = err.exit_code();
    if as_json {
        let v = serde_json::json!({ "error": err.kind(), "message": err.to_string(), "exit_code": code });
        eprintln!("{v}");
    } else {
        eprintln!("bloch-beam: {} error: {err}", err.kind());
    }
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    faer::set_global_parallelism(faer::Par::Seq);
    let cli = Cli::parse();
    let cfg = match RunConfig::from_path(&cli.config) {
        Ok(c) => c,
        Err(e) => return report(&e, cli.json),
    };
    let out = cli.out.unwrap_or_else(|| PathBuf::from(&cfg.output.directory));
    match run(cli.command, &cfg, &out) {
        Ok(summary) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&summary).expect("summary serialises"));
            }
            ExitCode::SUCCESS
        }
        Err(e) => report(&e, cli.json),
    }
}
