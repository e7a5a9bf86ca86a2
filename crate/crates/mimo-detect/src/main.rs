fn main() {
    std::process::exit(mimo_detect::cli::main());
}
