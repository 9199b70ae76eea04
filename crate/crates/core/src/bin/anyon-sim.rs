fn main() {
    std::process::exit(anyon_noise::cli::main_with_args(std::env::args_os()));
}
