fn main() {
    std::process::exit(chronocheck::cli::run(std::env::args_os()));
}
