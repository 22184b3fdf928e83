use clap::Parser;

fn main() {
    let cli = ccrf_depth_cli::Cli::parse();
    if let Err(e) = ccrf_depth_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
