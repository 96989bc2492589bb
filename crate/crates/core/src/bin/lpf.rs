fn main() -> std::process::ExitCode {
    lpf::harness::cli::main_with(std::env::args_os())
}
