fn main() {
    std::process::exit(fexkit::cli::run(std::env::args_os()));
}
