fn main() {
    std::process::exit(dhgnn_core::cli::run(std::env::args_os()));
}
