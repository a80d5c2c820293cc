fn main() {
    std::process::exit(universal_neurons::cli::run(std::env::args_os()));
}
