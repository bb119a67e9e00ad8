fn main() {
    std::process::exit(eitdiag::cli::run(std::env::args_os()));
}
