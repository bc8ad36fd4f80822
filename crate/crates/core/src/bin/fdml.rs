fn main() {
    std::process::exit(fdml::cli::run(std::env::args_os()));
}
