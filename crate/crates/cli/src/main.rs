fn main() {
    std::process::exit(egoexo_cli::run(std::env::args_os()));
}
