fn main() {
    std::process::exit(opiniondrift_core::cli::main_with_args(std::env::args_os()));
}
