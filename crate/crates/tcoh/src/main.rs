use clap::Parser;

fn main() {
    let cli = tcoh::cli::Cli::parse();
    if let Err(e) = tcoh::cli::run(cli) {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}
