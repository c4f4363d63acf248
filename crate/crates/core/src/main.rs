fn main() {
    std::process::exit(gsa::cli::main_with_args(std::env::args_os()));
}
