fn main() {
    std::process::exit(stereoseg::cli::run(std::env::args_os()));
}
