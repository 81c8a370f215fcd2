use std::process::ExitCode;

fn main() -> ExitCode {
    netsir::cli::main_with_args(std::env::args_os())
}
