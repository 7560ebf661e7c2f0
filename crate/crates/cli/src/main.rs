fn main() {
    std::process::exit(cpdnet_cli::run(std::env::args_os()));
}
