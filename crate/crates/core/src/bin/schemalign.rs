use std::process::ExitCode;

fn main() -> ExitCode {
    schemalign::cli::main_with_args(std::env::args_os())
}
