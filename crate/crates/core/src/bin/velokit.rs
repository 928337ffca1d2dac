fn main() {
    std::process::exit(velokit::cli::run(std::env::args_os()));
}
