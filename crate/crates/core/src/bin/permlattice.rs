fn main() {
    std::process::exit(permlattice::cli::main_with_args(std::env::args_os()));
}
