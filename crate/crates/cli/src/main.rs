fn main() {
    std::process::exit(lexsum_cli::run(std::env::args_os()));
}
