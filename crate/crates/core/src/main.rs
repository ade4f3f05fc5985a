fn main() {
    std::process::exit(hxsim::cli::main_with_args(std::env::args_os()));
}
