fn main() {
    std::process::exit(addrscope::cli::main_with_args(std::env::args_os()));
}
