fn main() {
    std::process::exit(crm::cli::run(std::env::args_os()));
}
