fn main() {
    std::process::exit(umamba::cli_main());
}
