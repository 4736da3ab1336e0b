fn main() {
    std::process::exit(caprecap::cli::main_with_args(std::env::args_os()));
}
