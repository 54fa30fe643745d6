fn main() -> std::process::ExitCode {
    chartfolio::cli::main()
}
