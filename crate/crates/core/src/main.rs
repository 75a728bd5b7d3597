use std::process::ExitCode;

fn main() -> ExitCode {
    arcnet::cli::main_with_args(std::env::args_os())
}
