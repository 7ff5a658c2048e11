use clap::Parser;

fn main() {
    let cli = gmcf_cli::Cli::parse();
    let env_seed = std::env::var("GMCF_SEED").ok();
    std::process::exit(gmcf_cli::run(&cli, env_seed.as_deref()));
}
