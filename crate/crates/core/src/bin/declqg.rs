fn main() {
    std::process::exit(declqg::cli::run(std::env::args_os()));
}
