use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(dfsnet::cli::main_with_args(std::env::args_os()))
}
