fn main() {
    std::process::exit(bicontact_cli::run(std::env::args_os()));
}
