fn main() {
    std::process::exit(hfbm_cli::run(std::env::args()));
}
