fn main() {
    std::process::exit(uncseg::cli::cli_main(std::env::args_os()));
}
