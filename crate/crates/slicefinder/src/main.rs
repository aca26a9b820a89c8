fn main() {
    std::process::exit(slicefinder::cli::main_with_args(std::env::args_os()));
}
