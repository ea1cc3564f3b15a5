fn main() {
    std::process::exit(geln::cli::dispatch(std::env::args_os()));
}
