fn main() {
    std::process::exit(jointpg::cli::main_with_args(std::env::args_os()));
}
