fn main() {
    std::process::exit(yaware_cli::dispatch(std::env::args_os()));
}
