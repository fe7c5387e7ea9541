fn main() {
    std::process::exit(syscat::cli::main_with_args(std::env::args_os()));
}
