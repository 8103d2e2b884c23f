fn main() {
    std::process::exit(ffusion::cli::main_with(std::env::args_os()));
}
