use std::process::ExitCode;

use envpred::Error;

fn main() -> ExitCode {
    let mut stdout = std::io::stdout().lock();
    match envpred::cli::run(std::env::args_os(), &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Usage(text)) => {
            eprint!("{text}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
