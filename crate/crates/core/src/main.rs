fn main() {
    std::process::exit(pairlab::cli::run(std::env::args_os()));
}
