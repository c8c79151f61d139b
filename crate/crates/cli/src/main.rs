use std::process::ExitCode;

use clap::Parser;

use interview_match_cli::{run, Args};

fn main() -> ExitCode {
    ExitCode::from(run(&Args::parse()))
}
