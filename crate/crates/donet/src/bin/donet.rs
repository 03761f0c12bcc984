//! Thin binary entry point; all logic lives in `donet::cli`.

use std::process::ExitCode;

fn main() -> ExitCode {
    donet::cli::run()
}
