fn main() {
    std::process::exit(envfield_cli::run(std::env::args_os()));
}
