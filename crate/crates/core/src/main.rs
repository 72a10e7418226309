fn main() -> std::process::ExitCode {
    uqbench::cli::main()
}
