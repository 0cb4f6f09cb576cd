fn main() {
    std::process::exit(steklov_nash::cli::run(std::env::args_os()));
}
