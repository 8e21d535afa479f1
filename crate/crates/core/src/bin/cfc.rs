fn main() {
    std::process::exit(cfcnet::cli::main_with_args(std::env::args_os()));
}
