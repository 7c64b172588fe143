use clap::Parser;

fn main() {
    let cli = hebbnet::cli::Cli::parse();
    if let Err(e) = hebbnet::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
