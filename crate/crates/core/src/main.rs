fn main() {
    std::process::exit(fsg_core::cli::run(std::env::args_os()));
}
