fn main() {
    std::process::exit(convattn::cli::run_cli(std::env::args_os()));
}
