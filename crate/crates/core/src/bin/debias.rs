fn main() {
    std::process::exit(debias_erm::cli::run(std::env::args_os()));
}
