fn main() {
    std::process::exit(nego_cli::main_with_args(std::env::args_os()));
}
