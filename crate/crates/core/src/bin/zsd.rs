fn main() {
    std::process::exit(zsd_kit::cli::run(std::env::args_os()));
}
