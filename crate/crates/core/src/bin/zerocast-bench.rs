fn main() -> std::process::ExitCode {
    zerocast::bench::cli::main()
}
