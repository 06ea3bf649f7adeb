fn main() {
    std::process::exit(boltzgate_cli::run());
}
