fn main() {
    std::process::exit(medlearn::cli::run_from(std::env::args_os()));
}
