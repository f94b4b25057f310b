fn main() {
    std::process::exit(distgof::cli::main_with_args(std::env::args_os()));
}
