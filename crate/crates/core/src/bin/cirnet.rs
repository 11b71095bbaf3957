fn main() {
    std::process::exit(cirnet::cli::run(std::env::args_os()));
}
