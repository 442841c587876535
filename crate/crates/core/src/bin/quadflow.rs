fn main() {
    std::process::exit(quadflow::cli::main_with_args(std::env::args_os()));
}
