fn main() {
    std::process::exit(ocmst::cli::run(std::env::args_os()));
}
