use std::process::ExitCode;

fn main() -> ExitCode {
    aeg::cli::main_with_args(std::env::args_os())
}
