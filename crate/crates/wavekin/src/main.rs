fn main() {
    std::process::exit(wavekin::cli::run(std::env::args_os()));
}
