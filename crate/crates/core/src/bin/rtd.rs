fn main() {
    std::process::exit(rtd_core::cli::cli_main(std::env::args_os()));
}
