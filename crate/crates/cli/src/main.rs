fn main() {
    std::process::exit(les_cli::main_with(std::env::args()));
}
