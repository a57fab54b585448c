fn main() {
    std::process::exit(graphdiff::cli::run(std::env::args_os()));
}
