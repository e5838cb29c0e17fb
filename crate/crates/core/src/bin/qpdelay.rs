fn main() {
    std::process::exit(qpdelay::cli::main_with(std::env::args_os()));
}
