use std::process::ExitCode;

use clap::Parser;
use mchar::cli::{run, Cli};

fn main() -> ExitCode {
    run(Cli::parse())
}
