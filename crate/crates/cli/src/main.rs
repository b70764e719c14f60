fn main() -> std::process::ExitCode {
    splitguard_cli::main_with(std::env::args_os())
}
