use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;

use clap::Parser;
use trace_edges_cli::config::Cli;
use trace_edges_cli::error::{EXIT_INTERNAL, EXIT_OK};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TRACE_EDGES_LOG", "error"))
        .init();
    let cli = Cli::parse();
    let code = match panic::catch_unwind(AssertUnwindSafe(|| trace_edges_cli::run(&cli))) {
        Ok(Ok(())) => EXIT_OK,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        Err(_) => EXIT_INTERNAL,
    };
    ExitCode::from(code as u8)
}
