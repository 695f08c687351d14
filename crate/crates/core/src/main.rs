fn main() {
    std::process::exit(flowsteer::cli::run(std::env::args_os()));
}
