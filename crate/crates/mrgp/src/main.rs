fn main() {
    std::process::exit(mrgp::cli::main_with(std::env::args_os()));
}
