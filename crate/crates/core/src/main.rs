fn main() -> std::process::ExitCode {
    sirlab::cli::main_with_args(std::env::args_os())
}
