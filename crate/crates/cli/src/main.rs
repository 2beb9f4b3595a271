fn main() {
    std::process::exit(sdoil_cli::run(std::env::args_os()));
}
