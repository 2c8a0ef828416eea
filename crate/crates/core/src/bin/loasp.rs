use clap::Parser;

fn main() {
    let cli = loasp::cli::Cli::parse();
    if let Err(e) = loasp::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
