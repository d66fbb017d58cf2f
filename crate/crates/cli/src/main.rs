use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AIRHOLD_LOG", "warn")).init();
    let cli = airhold_cli::Cli::parse();
    if let Err(e) = airhold_cli::run(cli) {
        eprintln!("{}", e.to_line());
        std::process::exit(e.exit_code());
    }
}
