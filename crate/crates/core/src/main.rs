fn main() {
    std::process::exit(tvlearn::cli::main_with_args(std::env::args_os()));
}
