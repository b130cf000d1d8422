fn main() -> std::process::ExitCode {
    herbnmt::cli::main_with(std::env::args_os())
}
