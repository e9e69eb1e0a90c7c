fn main() {
    std::process::exit(coforest::cli::main_with(std::env::args_os()));
}
