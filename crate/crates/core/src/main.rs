fn main() {
    std::process::exit(stopping_smp::cli::run_cli(std::env::args_os()));
}
