use std::process::ExitCode;

use clap::Parser;
use radsafe_cli::args::Cli;
use radsafe_cli::run;
use serde_json::json;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("tokio runtime");
    match runtime.block_on(run(&cli)) {
        Ok(out) => {
            if out.print(cli.json).is_err() {
                return ExitCode::from(1);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            if cli.json {
                println!("{}", json!({"error": e.code, "message": e.message, "exit_code": e.exit as u8}));
            }
            eprintln!("radsafe: {e}");
            ExitCode::from(e.exit as u8)
        }
    }
}
