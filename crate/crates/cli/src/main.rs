fn main() {
    std::process::exit(iacos_cli::dispatch(std::env::args_os()));
}
