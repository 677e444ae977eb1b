fn main() {
    std::process::exit(fsgraph::cli::main(std::env::args_os()));
}
