fn main() {
    std::process::exit(distobs_cli::main_with_args(std::env::args_os()));
}
