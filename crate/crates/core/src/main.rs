fn main() {
    std::process::exit(aerosynth::cli::run(std::env::args_os()));
}
