fn main() {
    std::process::exit(denseed_cli::run(std::env::args_os()));
}
