fn main() {
    std::process::exit(catkit_cli::run(std::env::args()));
}
