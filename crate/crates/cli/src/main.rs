fn main() {
    std::process::exit(qfuse_cli::run(std::env::args_os()));
}
