fn main() {
    std::process::exit(fsda_cli::main_with_args(std::env::args_os()));
}
