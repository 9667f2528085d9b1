fn main() {
    std::process::exit(linetension::cli::run(std::env::args_os()));
}
