use std::process::ExitCode;

fn main() -> ExitCode {
    vidref_cli::main_with(std::env::args_os())
}
