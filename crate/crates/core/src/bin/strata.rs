fn main() {
    std::process::exit(strata::cli::main_with_args(std::env::args_os()));
}
