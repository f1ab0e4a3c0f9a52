fn main() {
    std::process::exit(structura::cli::run(std::env::args_os()));
}
