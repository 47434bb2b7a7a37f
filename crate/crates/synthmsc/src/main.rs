use clap::Parser;
use synthmsc::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli.command) {
        eprintln!("synthmsc: {e:#}");
        std::process::exit(1);
    }
}
