fn main() {
    std::process::exit(dnls_core::cli::parse_and_dispatch(std::env::args_os()));
}
