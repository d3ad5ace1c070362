use clap::Parser;
use ggls_cli::{exit_code, run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(outcome) => {
            if let Some(a) = outcome.accuracy {
                println!("target accuracy: {:.2}%", 100.0 * a);
            }
            println!("manifest: {}", outcome.manifest_path.display());
        }
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(exit_code(&err));
        }
    }
}
