fn main() -> std::process::ExitCode {
    std::process::ExitCode::from(poeplan_cli::run_cli(std::env::args_os()))
}
