fn main() {
    std::process::exit(linrank::cli::run_command(std::env::args_os()));
}
