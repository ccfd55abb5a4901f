use clap::Parser;

fn main() {
    let cli = crps_combine_cli::config::Cli::parse();
    if let Err(e) = crps_combine_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
