fn main() {
    std::process::exit(driftrec::cli::run());
}
