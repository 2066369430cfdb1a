fn main() {
    std::process::exit(nngp::cli::main_with_args(std::env::args_os()));
}
