fn main() {
    std::process::exit(novelrates::cli::run(std::env::args_os()));
}
