use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(odseg::cli::run_from(std::env::args_os()) as u8)
}
