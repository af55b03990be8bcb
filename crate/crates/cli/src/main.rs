use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use hyperstab_cli::run::error_kind;
use hyperstab_cli::{exit_code, parse_config, run};
use serde_json::json;

/// Backstepping kernels, sampled gains and closed-loop simulation of large-scale hyperbolic systems.
#[derive(Debug, Parser)]
#[command(name = "hyperstab", version)]
struct Cli {
    /// Run configuration (TOML, or JSON with a .json extension).
    #[arg(long)]
    config: PathBuf,
    /// Parent directory of the run directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long, env = "HYPERSTAB_THREADS")]
    threads: Option<usize>,
    #[arg(long, short)]
    verbose: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Debug } else { log::LevelFilter::Warn })
        .format_timestamp(None)
        .init();

    let result = parse_config(&cli.config).map_err(anyhow::Error::from).and_then(|cfg| {
        if let Some(t) = cli.threads.or(cfg.threads) {
            rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global()?;
        }
        run(&cfg, cli.out.as_deref())
    });
    match result {
        Ok(outcome) => {
            println!("{}", json!({ "status": "ok", "run_dir": outcome.dir, "summary": outcome.manifest.summary }));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = exit_code(&e);
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("{}", json!({ "status": "error", "kind": error_kind(code), "exit_code": code, "message": e.to_string(), "causes": chain }));
            ExitCode::from(code as u8)
        }
    }
}
