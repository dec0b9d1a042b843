fn main() {
    std::process::exit(modsplit::cli::main_with(std::env::args_os()));
}
