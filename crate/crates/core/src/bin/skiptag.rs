fn main() {
    std::process::exit(skiptag::cli::run(std::env::args_os()));
}
