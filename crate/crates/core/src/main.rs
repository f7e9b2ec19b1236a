fn main() {
    std::process::exit(polling::cli::run(std::env::args_os()));
}
