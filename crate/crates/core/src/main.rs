fn main() {
    std::process::exit(olapsim::cli::main());
}
