fn main() {
    std::process::exit(rbfq_cli::commands::run());
}
