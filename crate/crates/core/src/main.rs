fn main() {
    std::process::exit(cosam::cli::run(std::env::args_os()));
}
