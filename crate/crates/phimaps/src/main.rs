fn main() {
    std::process::exit(phimaps::cli::main_with_args(std::env::args_os()));
}
