fn main() {
    std::process::exit(jsm2_lab::cli::main_with_args(std::env::args_os()));
}
