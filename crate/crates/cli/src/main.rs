use clap::Parser;

fn main() {
    let cli = rlam_cli::Cli::parse();
    if let Err(err) = rlam_cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(rlam_cli::exit_code(&err));
    }
}
