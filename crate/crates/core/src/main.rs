fn main() {
    std::process::exit(holdq::cli::main());
}
