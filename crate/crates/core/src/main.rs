fn main() {
    std::process::exit(demandcast::cli::run(std::env::args_os()));
}
