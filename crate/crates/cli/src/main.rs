fn main() {
    std::process::exit(shs_sentinel_cli::run(std::env::args_os()));
}
