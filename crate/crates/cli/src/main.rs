use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(pdmp_cli::run(std::env::args_os()))
}
