use std::io::Write;

use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = frqmc_cli::Cli::parse();
    match frqmc_cli::run(cli) {
        Ok(files) => {
            let mut out = std::io::stdout().lock();
            for f in files {
                if writeln!(out, "{}", f.display()).is_err() {
                    break;
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
