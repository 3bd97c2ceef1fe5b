fn main() -> std::process::ExitCode {
    alignkv::cli::main_with_args(std::env::args_os())
}
