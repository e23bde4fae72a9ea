fn main() {
    std::process::exit(panosphere_cli::dispatch(std::env::args_os()));
}
