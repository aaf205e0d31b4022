fn main() {
    std::process::exit(shortstack::cli::run());
}
