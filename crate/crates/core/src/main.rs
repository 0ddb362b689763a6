fn main() {
    std::process::exit(xpl::cli::run(std::env::args_os()));
}
