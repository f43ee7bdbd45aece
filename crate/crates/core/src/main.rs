fn main() {
    std::process::exit(mortpca::cli::run());
}
