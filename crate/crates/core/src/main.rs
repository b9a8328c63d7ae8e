use std::process::ExitCode;

fn main() -> ExitCode {
    sharpefolio::cli::main()
}
