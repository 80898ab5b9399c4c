use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(stgan::cli::run(std::env::args_os()))
}
