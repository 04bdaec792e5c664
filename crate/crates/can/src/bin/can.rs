fn main() {
    std::process::exit(can::cli::run(std::env::args()));
}
