fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(enksgd_cli::run_main(&args));
}
