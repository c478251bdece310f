fn main() {
    std::process::exit(bike_core::cli::run(std::env::args_os()));
}
