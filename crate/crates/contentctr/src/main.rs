use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(contentctr::cli::run())
}
