use clap::Parser;

fn main() {
    let cli = layered_dr_cli::Cli::parse();
    if let Err(e) = layered_dr_cli::run(cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
