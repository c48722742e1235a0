fn main() {
    std::process::exit(grf_cli::run(std::env::args_os()));
}
