fn main() {
    std::process::exit(ssmamp_cli::cli::run(std::env::args_os()));
}
