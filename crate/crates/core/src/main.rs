use std::process::ExitCode;

use clap::Parser;
use vmimo::cli::{run, Args};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VMIMO_LOG", "warn")).init();
    let args = Args::parse();
    let result = args.resolve().and_then(|(cfg, out)| run(args.command, &cfg, &out));
    match result {
        Ok(files) => {
            log::info!("wrote {} files", files.len());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
