fn main() -> std::process::ExitCode {
    efp_core::cli::main_with_args(std::env::args_os())
}
