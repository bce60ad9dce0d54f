fn main() {
    std::process::exit(weakseg::cli::cli_main(std::env::args_os()));
}
