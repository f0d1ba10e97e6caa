use clap::Parser;

fn main() {
    let cli = blindsight::cli::Cli::parse();
    if let Err(e) = blindsight::cli::execute(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
