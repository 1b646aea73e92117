fn main() -> std::process::ExitCode {
    privedit::cli::main_with_args(std::env::args_os())
}
