use clap::Parser;
use gcmc_ata::cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    std::process::exit(run(&cli.command).code());
}
