fn main() {
    std::process::exit(willow::cli::dispatch(std::env::args_os()));
}
