fn main() {
    std::process::exit(afem::cli::run_cli(std::env::args_os()));
}
