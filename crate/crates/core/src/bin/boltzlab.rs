fn main() {
    std::process::exit(boltzlab::cli::run(std::env::args_os()));
}
