use awac_cli::{run, Cli, EXIT_OK};
use clap::Parser;
use std::io::Write;
use std::process::ExitCode;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            let _ = std::io::stdout().write_all(out.as_bytes());
            ExitCode::from(EXIT_OK as u8)
        }
        Err(e) => {
            let err = anyhow::Error::new(e);
            eprintln!("error: {err:#}");
            let code = err.downcast_ref::<awac_cli::CliError>().map_or(1, |c| c.exit_code());
            ExitCode::from(code as u8)
        }
    }
}
