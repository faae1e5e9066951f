fn main() {
    std::process::exit(icam::cli::dispatch(std::env::args_os()));
}
