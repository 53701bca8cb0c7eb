use clap::Parser;
use galerkin::cli::{self, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = cli::run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
