fn main() {
    std::process::exit(sdr_cli::run(std::env::args_os()));
}
