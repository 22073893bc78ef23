use std::process::ExitCode;

fn main() -> ExitCode {
    dit_core::cli::main_with_args(std::env::args_os())
}
