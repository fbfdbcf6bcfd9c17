fn main() {
    std::process::exit(contrast3d::cli::cli_dispatch(std::env::args_os()));
}
