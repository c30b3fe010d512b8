use std::process::ExitCode;

fn main() -> ExitCode {
    probout::cli::main_with(std::env::args_os())
}
