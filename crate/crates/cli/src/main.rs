fn main() {
    std::process::exit(land_cli::run(std::env::args_os()));
}
