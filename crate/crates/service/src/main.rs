fn main() -> std::process::ExitCode {
    normalforge_service::cli::main()
}
