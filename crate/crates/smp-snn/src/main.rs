use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(smp_snn::cli::run() as u8)
}
