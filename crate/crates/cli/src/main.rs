use clap::Parser;
use tracing_subscriber::EnvFilter;

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("GRAPHMEM_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = graphmem_cli::cli::Cli::parse();
    if let Err(err) = graphmem_cli::cli::run(cli) {
        eprintln!("{}", graphmem_cli::cli::error_json(&err));
        std::process::exit(graphmem_cli::cli::exit_code(&err));
    }
}
