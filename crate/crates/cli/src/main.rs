fn main() {
    std::process::exit(fairgap_cli::main_with_args(std::env::args_os()));
}
