fn main() {
    std::process::exit(ltfm::cli::main());
}
