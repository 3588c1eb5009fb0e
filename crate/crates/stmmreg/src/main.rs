fn main() {
    std::process::exit(stmmreg::cli::run(std::env::args_os()));
}
