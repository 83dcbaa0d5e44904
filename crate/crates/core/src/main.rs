fn main() -> std::process::ExitCode {
    multips::cli::run()
}
