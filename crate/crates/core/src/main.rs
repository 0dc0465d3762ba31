fn main() {
    std::process::exit(occlusia::cli::run(std::env::args_os()));
}
