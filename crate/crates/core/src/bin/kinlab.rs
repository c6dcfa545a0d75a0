use std::process::ExitCode;

use clap::Parser;
use kinlab::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(report) => {
            for line in &report.lines {
                println!("{line}");
            }
            println!("wrote {} files to {}", report.files.len(), report.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("kinlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
