fn main() {
    std::process::exit(lcapa_cli::run(std::env::args_os()));
}
