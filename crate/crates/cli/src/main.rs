fn main() {
    std::process::exit(rankef_cli::run(std::env::args_os()));
}
