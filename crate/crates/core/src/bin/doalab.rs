fn main() {
    std::process::exit(doalab::cli::run(std::env::args_os()));
}
