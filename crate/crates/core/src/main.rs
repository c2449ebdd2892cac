fn main() {
    std::process::exit(inr_arq::cli::main());
}
