fn main() {
    std::process::exit(sfoc_core::cli::run(std::env::args_os()));
}
