fn main() {
    std::process::exit(distba::cli::run(std::env::args_os()));
}
