fn main() {
    std::process::exit(lens::cli::run(std::env::args_os()));
}
