fn main() -> std::process::ExitCode {
    compsplat_cli::main_with_args(std::env::args_os())
}
