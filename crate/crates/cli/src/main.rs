fn main() {
    std::process::exit(remoni_cli::run(std::env::args_os()));
}
