fn main() {
    std::process::exit(hbfp::cli::run(std::env::args_os()));
}
