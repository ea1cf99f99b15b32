fn main() {
    std::process::exit(shopmatch::cli::main_with(std::env::args_os().collect()));
}
