fn main() {
    std::process::exit(unimos::cli::cli_main(std::env::args_os()));
}
