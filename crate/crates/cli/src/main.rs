fn main() {
    std::process::exit(adacnp_cli::run(std::env::args_os()));
}
