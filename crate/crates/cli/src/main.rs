fn main() {
    std::process::exit(robust_lspi_cli::cli::run(std::env::args_os()));
}
