fn main() {
    std::process::exit(biowipe_cli::run(std::env::args_os()));
}
