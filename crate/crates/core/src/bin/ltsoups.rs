fn main() {
    std::process::exit(ltsoups::cli::main_with_args(std::env::args_os()));
}
