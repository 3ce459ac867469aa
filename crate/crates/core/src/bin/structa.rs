fn main() {
    std::process::exit(structa::cli::main_with_args(std::env::args_os()));
}
