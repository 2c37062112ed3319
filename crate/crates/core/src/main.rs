fn main() {
    std::process::exit(dualre::cli::run(std::env::args_os()));
}
