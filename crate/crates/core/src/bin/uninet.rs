fn main() {
    std::process::exit(uninet::cli::run_from(std::env::args_os()));
}
