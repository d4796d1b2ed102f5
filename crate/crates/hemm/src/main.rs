fn main() {
    std::process::exit(hemm::cli_main());
}
