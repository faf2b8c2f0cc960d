fn main() {
    std::process::exit(sd2ail::cli::run(std::env::args()));
}
