fn main() {
    std::process::exit(mpsim::cli::main_with_args(std::env::args_os()));
}
