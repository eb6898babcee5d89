fn main() {
    std::process::exit(trifuse_cli::run(std::env::args_os()));
}
