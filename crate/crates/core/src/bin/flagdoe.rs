fn main() {
    std::process::exit(flagdoe::cli::main_with_args(std::env::args_os()));
}
