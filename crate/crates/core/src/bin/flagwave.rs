use clap::Parser;
use flagwave::cli::{run, Cli};

fn main() {
    std::process::exit(run(&Cli::parse()));
}
