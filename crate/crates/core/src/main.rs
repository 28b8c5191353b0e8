fn main() {
    std::process::exit(homeprog::cli::main_with_stdout());
}
