use clap::Parser;
use proxy_isa::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
