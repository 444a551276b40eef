fn main() {
    std::process::exit(brdiv::cli::run(std::env::args_os()));
}
