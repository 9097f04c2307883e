fn main() -> std::process::ExitCode {
    dataless::cli::main()
}
