fn main() {
    std::process::exit(potts_cli::main_with_args(std::env::args_os()));
}
