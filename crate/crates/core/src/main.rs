fn main() {
    std::process::exit(tankdef::cli::run(std::env::args_os()));
}
