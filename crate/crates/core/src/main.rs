use std::process::ExitCode;

fn main() -> ExitCode {
    kpp_spectra::cli::dispatch(std::env::args().collect())
}
