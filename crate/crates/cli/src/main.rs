fn main() {
    std::process::exit(septq_cli::run());
}
