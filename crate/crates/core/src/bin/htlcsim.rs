use std::process::ExitCode;

fn main() -> ExitCode {
    htlcsim::cli::main_with_args(std::env::args_os())
}
