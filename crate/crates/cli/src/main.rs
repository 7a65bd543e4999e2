fn main() {
    std::process::exit(basisnet_cli::cli_main(std::env::args_os()));
}
