fn main() {
    std::process::exit(oseen_core::cli::run(std::env::args_os()));
}
