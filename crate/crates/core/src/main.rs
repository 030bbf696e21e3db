fn main() {
    std::process::exit(xtrace::cli::run(std::env::args_os()));
}
